"""Acceptor phase fields, interface indicator and energy-level fields.

Morphology *formation* is not simulated here. Fields are either read from
PHF files or produced by small synthetic generators used in tests and
demos.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, DomainError, PhfFormatError

__all__ = [
    "PhaseField",
    "InterfaceField",
    "EnergyLevels",
    "load_phase_field",
    "save_phase_field",
    "generate_synthetic",
    "interface_indicator",
    "energy_levels",
]

CLAMP_TOL = 1e-9


@dataclass(frozen=True)
class PhaseField:
    values: np.ndarray
    mesh: object

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.num_vertices,):
            raise DimensionError(f"phase field has {v.size} values for {self.mesh.num_vertices} nodes")
        if np.any(v < 0) or np.any(v > 1):
            raise DomainError("phase field values must lie in [0, 1]")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class InterfaceField:
    values: np.ndarray


@dataclass(frozen=True)
class EnergyLevels:
    e_lumo: np.ndarray
    e_homo: np.ndarray


# --- PHF text format -------------------------------------------------------

def load_phase_field(path, mesh):
    """Read a PHF file whose grid matches the node counts of ``mesh``."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 3:
        raise PhfFormatError(f"{path}: truncated header")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "PHF1":
        raise PhfFormatError(f"{path}: line 1 must read 'PHF1 <dim>'")
    try:
        dim = int(head[1])
        counts = tuple(int(c) for c in lines[1].split())
        extent = tuple(float(e) for e in lines[2].split())
    except ValueError as exc:
        raise PhfFormatError(f"{path}: malformed header ({exc})") from None
    if dim not in (2, 3) or len(counts) != dim or len(extent) != dim:
        raise PhfFormatError(f"{path}: header dimensions inconsistent")
    if dim != mesh.dim or counts != tuple(mesh.counts):
        raise DimensionError(f"{path}: grid {counts} does not match mesh nodes {mesh.counts}")
    body = lines[3:]
    if len(body) != mesh.num_vertices:
        raise PhfFormatError(f"{path}: expected {mesh.num_vertices} values, found {len(body)}")
    try:
        values = np.array([float(v) for v in body])
    except ValueError as exc:
        raise PhfFormatError(f"{path}: bad value ({exc})") from None
    bad = (values < -CLAMP_TOL) | (values > 1 + CLAMP_TOL) | ~np.isfinite(values)
    if np.any(bad):
        first = int(np.argmax(bad))
        raise DomainError(f"{path}: value {values[first]!r} at node {first} outside [0, 1]")
    return PhaseField(np.clip(values, 0.0, 1.0), mesh)


def save_phase_field(field, path):
    mesh = field.mesh
    with open(path, "w") as fh:
        fh.write(f"PHF1 {mesh.dim}\n")
        fh.write(" ".join(str(c) for c in mesh.counts) + "\n")
        fh.write(" ".join(repr(float(e)) for e in mesh.extent) + "\n")
        for v in field.values:
            fh.write(repr(float(v)) + "\n")


# --- synthetic generators --------------------------------------------------

def _graph_laplacian_smoother(mesh):
    """Row-stochastic neighbour-averaging operator on the mesh graph."""
    n = mesh.num_vertices
    edges = []
    for a in range(mesh.dim + 1):
        for b in range(a + 1, mesh.dim + 1):
            edges.append(mesh.cells[:, [a, b]])
    e = np.unique(np.sort(np.concatenate(edges), axis=1), axis=0)
    adj = sp.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                        shape=(n, n)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return sp.diags(1.0 / deg) @ adj


def generate_synthetic(kind, mesh, **kw):
    """Synthetic phase field.

    ``kind`` is one of ``uniform`` (c), ``bilayer`` (h_split),
    ``checkerboard`` (period) or ``smoothed_noise`` (seed, blend_ratio,
    smoothing_passes).
    """
    x = mesh.vertices
    vert = x[:, -1]
    if kind == "uniform":
        c = float(kw.get("c", 0.5))
        if not 0 <= c <= 1:
            raise DomainError("uniform level c must lie in [0, 1]")
        return PhaseField(np.full(mesh.num_vertices, c), mesh)
    if kind == "bilayer":
        h = float(kw["h_split"])
        if not 0 < h < mesh.height:
            raise DomainError(f"h_split must lie in (0, {mesh.height})")
        return PhaseField((vert > h).astype(float), mesh)
    if kind == "checkerboard":
        period = float(kw["period"])
        if not period > 0:
            raise DomainError("checkerboard period must be > 0")
        # nodes on block boundaries go to the lower block
        block = np.ceil(x / period - 1e-9).astype(np.int64) - 1
        block = np.maximum(block, 0)
        return PhaseField((block.sum(axis=1) % 2 == 0).astype(float), mesh)
    if kind == "smoothed_noise":
        seed = int(kw.get("seed", 0))
        ratio = float(kw.get("blend_ratio", 0.5))
        passes = int(kw.get("smoothing_passes", 10))
        if not 0 < ratio < 1:
            raise DomainError("blend_ratio must lie in (0, 1)")
        if passes < 0:
            raise DomainError("smoothing_passes must be >= 0")
        rng = np.random.default_rng(seed)
        s = rng.standard_normal(mesh.num_vertices)
        smooth = _graph_laplacian_smoother(mesh)
        for _ in range(passes):
            s = smooth @ s
        threshold = np.quantile(s, 1.0 - ratio)
        width = 0.25 * np.std(s) if np.std(s) > 0 else 1.0
        phi = 0.5 * (1.0 + np.tanh((s - threshold) / width))
        return PhaseField(np.clip(phi, 0.0, 1.0), mesh)
    raise DomainError(f"unknown synthetic morphology {kind!r}")


# --- derived fields --------------------------------------------------------

def interface_indicator(phi, mesh=None):
    """Nodal |grad phi| from the P1 interpolant, volume-averaged over the
    cells around each node."""
    if mesh is None:
        mesh = phi.mesh
    values = np.asarray(getattr(phi, "values", phi), dtype=float)
    fe = mesh.fe
    g = np.linalg.norm(fe.cell_gradient(values), axis=1)
    num = fe.vector(np.repeat((g * fe.vol)[:, None], fe.nloc, axis=1))
    den = fe.vector(np.repeat(fe.vol[:, None], fe.nloc, axis=1))
    return InterfaceField(num / den)


def energy_levels(phi, params):
    """LUMO/HOMO fields linearly interpolated between donor and acceptor values."""
    v = np.asarray(getattr(phi, "values", phi), dtype=float)
    e_l = params.E_L_p + (params.E_L_nfa - params.E_L_p) * v
    e_h = params.E_H_p + (params.E_H_nfa - params.E_H_p) * v
    return EnergyLevels(e_l, e_h)
