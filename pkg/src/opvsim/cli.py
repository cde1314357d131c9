"""Command-line front end.

``opvsim simulate RUN.ini``    run the configured voltage sweep
``opvsim check RUN.ini``       validate a run file and exit
``opvsim morphology SPEC.ini`` write a synthetic phase field as PHF

The output directory of ``simulate`` is resolved below ``$OPVSIM_OUTPUT_ROOT``
when that variable is set and the configured directory is relative.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import parse_config
from .errors import ConfigError, OpvSimError
from .io import write_iv_csv, write_vtk
from .mesh import build_structured_mesh
from .morphology import generate_synthetic, load_phase_field, save_phase_field
from .solvers import voltage_sweep

log = logging.getLogger("opvsim")

__all__ = ["RunSummary", "build_morphology", "run_simulate", "run_generate_morphology", "main"]


@dataclass
class RunSummary:
    converged: bool
    points: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    message: str = ""

    def as_dict(self):
        return {"converged": self.converged, "points": self.points,
                "outputs": [str(p) for p in self.outputs], "wall_time": self.wall_time,
                "message": self.message}


def build_morphology(cfg):
    """Mesh and phase field described by a RunConfig."""
    mesh = build_structured_mesh(cfg.extent, cfg.counts)
    spec = dict(cfg.morphology)
    kind = spec.pop("source")
    if kind == "file":
        return mesh, load_phase_field(spec["path"], mesh)
    spec.pop("path", None)
    allowed = {"uniform": ("c",), "bilayer": ("h_split",), "checkerboard": ("period",),
               "smoothed_noise": ("seed", "blend_ratio", "smoothing_passes")}[kind]
    unused = sorted(set(spec) - set(allowed))
    if unused:
        log.warning("morphology keys %s are ignored for %s", unused, kind)
    return mesh, generate_synthetic(kind, mesh, **{k: spec[k] for k in allowed if k in spec})


def _snapshot_name(v):
    return f"fields_v{v:+.6f}".replace("+", "p").replace("-", "m").replace(".", "_") + ".vtk"


def run_simulate(cfg):
    """Run the sweep of ``cfg`` and write its outputs."""
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh, phi = build_morphology(cfg)
    wanted = list(cfg.snapshots)
    outputs = []

    def snapshot(point, state, fields):
        if "vtk" not in cfg.formats:
            return
        if any(abs(point.v_top - v) <= 1e-9 * max(1.0, abs(v)) for v in wanted):
            n, p = fields.densities(state.psi, state.phi_n, state.phi_p, cfg.params)
            path = out / _snapshot_name(point.v_top)
            write_vtk({"phi": phi.values, "psi": state.psi, "n": n, "p": p, "X": state.X},
                      mesh, path)
            outputs.append(path)

    curve = voltage_sweep(phi, cfg.params, cfg.sweep, cfg.solver.method, cfg.solver,
                          callback=snapshot)
    if "csv" in cfg.formats:
        path = out / "iv.csv"
        write_iv_csv(curve, path)
        outputs.append(path)
    rows = []
    for p in curve:
        rows.append({"v_top": p.v_top, "v_bot": p.v_bot, "i_top": p.i_top, "i_bot": p.i_bot,
                     "conservation": p.conservation,
                     "conservation_ok": p.conservation <= cfg.conservation_threshold,
                     **p.report.as_dict()})
    converged = not curve.failed and all(r["converged"] for r in rows)
    summary = RunSummary(converged, rows, outputs, time.perf_counter() - t0, curve.message)
    if "json" in cfg.formats:
        path = out / "report.json"
        summary.outputs.append(path)
        with open(path, "w") as fh:
            json.dump(summary.as_dict(), fh, indent=2, default=float)
    return summary


def run_generate_morphology(spec_path, out_path=None):
    """Write the synthetic morphology of a run or spec file as a PHF file."""
    cfg = parse_config(spec_path)
    if cfg.morphology["source"] == "file":
        raise ConfigError("morphology generation needs a synthetic source, not a file")
    mesh, phi = build_morphology(cfg)
    out_path = Path(out_path) if out_path else cfg.output_dir / "morphology.phf"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_phase_field(phi, out_path)
    return out_path


def _parser():
    ap = argparse.ArgumentParser(prog="opvsim", description="Organic solar cell device simulator")
    ap.add_argument("-v", "--verbose", action="count", default=0,
                    help="more logging (repeat for debug output)")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a voltage sweep")
    s.add_argument("config")
    c = sub.add_parser("check", help="validate a run file")
    c.add_argument("config")
    m = sub.add_parser("morphology", help="write a synthetic phase field as PHF")
    m.add_argument("config")
    m.add_argument("-o", "--output", help="PHF file to write (default: <output dir>/morphology.phf)")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "check":
            cfg = parse_config(args.config)
            print(f"{args.config}: ok ({cfg.solver.method}, {len(cfg.sweep.voltages())} "
                  f"voltage points, mesh {'x'.join(map(str, cfg.counts))})")
            return 0
        if args.command == "morphology":
            path = run_generate_morphology(args.config, args.output)
            print(f"wrote {path}")
            return 0
        cfg = parse_config(args.config)
        summary = run_simulate(cfg)
        for row in summary.points:
            flag = "" if row["conservation_ok"] else "  [conservation above threshold]"
            print(f"V_top={row['v_top']:.6g}  I_top={row['i_top']:.6e}  I_bot={row['i_bot']:.6e}"
                  f"  conservation={row['conservation']:.2e}  converged={row['converged']}{flag}")
        if not summary.converged:
            print(f"sweep incomplete: {summary.message}", file=sys.stderr)
            return 3
        return 0
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OpvSimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
