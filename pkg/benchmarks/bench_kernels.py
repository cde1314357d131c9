"""Compare the compiled and pure-Python ILU(0) kernels.

Factorization and triangular solves are timed on the coupled Newton
Jacobian of a checkerboard device (node-interleaved ordering, as used by the
solver) and on the Poisson matrix, for a few mesh sizes.

    python benchmarks/bench_kernels.py [--sizes 16 32 64] [--repeat 5]
"""
import argparse
import time

import numpy as np

from opvsim import kernels
from opvsim.assembly import (AssembledSystem, DeviceFields, apply_dirichlet, assemble_stiffness,
                             coupled_residual_jacobian)
from opvsim.linsolve.precond import ILU0
from opvsim.mesh import build_structured_mesh
from opvsim.morphology import generate_synthetic
from opvsim.physics import ModelParams
from opvsim.solvers import initial_state


def matrices(n):
    m = build_structured_mesh((10, 10), (n, n))
    par = ModelParams()
    f = DeviceFields.build(m, generate_synthetic("checkerboard", m, period=2.5), par)
    s = initial_state(f, 0.5, 0.0, par)
    _, jac = coupled_residual_jacobian(s, s, s.X, f, par, 1e-3, 0.5, 0.0)
    nn = m.num_vertices
    perm = np.arange(3 * nn).reshape(3, nn).T.ravel()
    poisson = apply_dirichlet(AssembledSystem(assemble_stiffness(m), np.zeros(nn), f.contacts,
                                              np.zeros(f.contacts.size))).matrix
    return {"jacobian": jac[perm][:, perm].tocsr(), "poisson": poisson.tocsr()}


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "compiled":
        print("compiled kernels are not available; only the Python timings are shown")
    backends = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])
    rng = np.random.default_rng(0)
    header = f"{'matrix':>9} {'n':>4} {'rows':>7} {'backend':>9} {'factor ms':>10} {'solve ms':>9}"
    print(header)
    print("-" * len(header))
    for n in args.sizes:
        for name, a in matrices(n).items():
            b = rng.normal(size=a.shape[0])
            results = {}
            for backend in backends:
                t_fac = best_of(lambda: ILU0(a, backend=backend), args.repeat)
                pre = ILU0(a, backend=backend)
                t_sol = best_of(lambda: pre(b), args.repeat)
                results[backend] = (t_fac, t_sol, pre(b))
                print(f"{name:>9} {n:>4} {a.shape[0]:>7} {backend:>9} {1e3 * t_fac:>10.2f} "
                      f"{1e3 * t_sol:>9.3f}")
            if len(results) == 2:
                py, cc = results["python"], results["compiled"]
                diff = np.max(np.abs(py[2] - cc[2])) / np.max(np.abs(py[2]))
                print(f"{'':>9} {'':>4} {'':>7} {'speedup':>9} {py[0] / cc[0]:>10.1f} "
                      f"{py[1] / cc[1]:>9.1f}   (max rel. difference {diff:.1e})")


if __name__ == "__main__":
    main()
