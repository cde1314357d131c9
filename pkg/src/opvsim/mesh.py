"""Structured simplicial meshes of box domains with tagged boundaries.

Nodes are numbered row-major with the x index running fastest and the
vertical (last) axis slowest. The top contact is the face of maximal
vertical coordinate, the bottom contact the minimal one; every other
boundary facet is insulated.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np

from .errors import DimensionError, GeometryError

__all__ = [
    "BoundaryTag",
    "ElementGeometry",
    "Mesh",
    "build_structured_mesh",
    "boundary_nodes",
    "element_geometry",
]


class BoundaryTag(enum.IntEnum):
    TOP_ORG = 0
    BOT_ORG = 1
    INS = 2


@dataclass(frozen=True)
class ElementGeometry:
    volume: float
    grad_basis: np.ndarray  # (dim+1, dim)


def _simplex_volumes(points):
    """Signed simplex measures for an array of shape (nc, dim+1, dim)."""
    edges = points[:, 1:, :] - points[:, :1, :]
    dim = points.shape[2]
    return np.linalg.det(edges) / factorial(dim)


class Mesh:
    """Simplicial mesh of a box.

    Parameters
    ----------
    vertices : (N, dim) array
    cells : (nc, dim+1) int array
    facets : (nf, dim) int array
        Boundary facets.
    facet_tags : (nf,) int array of BoundaryTag values
    counts, extent : tuple
        Structured-grid metadata (nodes per axis, box lengths).
    """

    def __init__(self, vertices, cells, facets, facet_tags, counts, extent):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        self.facets = np.ascontiguousarray(facets, dtype=np.int64)
        self.facet_tags = np.ascontiguousarray(facet_tags, dtype=np.int64)
        self.counts = tuple(int(c) for c in counts)
        self.extent = tuple(float(e) for e in extent)
        for arr in (self.vertices, self.cells, self.facets, self.facet_tags):
            arr.setflags(write=False)

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def height(self):
        return self.extent[-1]

    @property
    def measure(self):
        return float(np.prod(self.extent))

    def __repr__(self):
        return (f"Mesh(dim={self.dim}, counts={self.counts}, extent={self.extent}, "
                f"cells={self.num_cells})")

    @cached_property
    def volumes(self):
        return np.abs(_simplex_volumes(self.vertices[self.cells]))

    @cached_property
    def grad_basis(self):
        """Constant P1 basis gradients, shape (nc, dim+1, dim)."""
        pts = self.vertices[self.cells]
        edges = pts[:, 1:, :] - pts[:, :1, :]          # rows: x_k - x_0
        # grad(lambda_k), k>=1, are the columns of inv(edges)
        inv = np.linalg.inv(edges)                      # (nc, dim, dim)
        g = np.empty((self.num_cells, self.dim + 1, self.dim))
        g[:, 1:, :] = np.transpose(inv, (0, 2, 1))
        g[:, 0, :] = -g[:, 1:, :].sum(axis=1)
        return g

    @cached_property
    def facet_measures(self):
        pts = self.vertices[self.facets]
        if self.dim == 2:
            return np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]), axis=1)

    @cached_property
    def fe(self):
        from .assembly import P1Space
        return P1Space(self)


def _grid_index(counts):
    return np.arange(int(np.prod(counts))).reshape(tuple(reversed(counts)))


def _cells_2d(counts):
    idx = _grid_index(counts)                 # idx[j, i]
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    # every quad split along its (0,0)-(1,1) diagonal
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    cells = np.empty((2 * v00.size, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper
    return cells


def _cells_3d(counts):
    idx = _grid_index(counts)                 # idx[k, j, i]
    corner = {}
    for di, dj, dk in itertools.product((0, 1), repeat=3):
        nk, nj, ni = idx.shape
        corner[(di, dj, dk)] = idx[dk:nk - 1 + dk, dj:nj - 1 + dj, di:ni - 1 + di].ravel()
    # Kuhn subdivision: six tets sharing the (0,0,0)-(1,1,1) diagonal
    tets = []
    for perm in itertools.permutations(range(3)):
        path = [(0, 0, 0)]
        cur = [0, 0, 0]
        for axis in perm:
            cur[axis] = 1
            path.append(tuple(cur))
        tets.append(np.stack([corner[c] for c in path], axis=1))
    cells = np.stack(tets, axis=1).reshape(-1, 4)
    return cells


def _boundary_facets(cells, vertices, extent):
    dim = vertices.shape[1]
    local = list(itertools.combinations(range(dim + 1), dim))
    faces = np.concatenate([cells[:, list(c)] for c in local], axis=0)
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = np.asarray(inverse).ravel()
    once = counts[inverse] == 1
    facets = faces[once]
    tol = 1e-9 * extent[-1]
    tags = np.full(facets.shape[0], BoundaryTag.INS, dtype=np.int64)
    # a facet lies on the top/bottom face only if all its vertices do
    top = np.all(np.abs(vertices[facets][:, :, -1] - extent[-1]) <= tol, axis=1)
    bot = np.all(np.abs(vertices[facets][:, :, -1]) <= tol, axis=1)
    tags[top] = BoundaryTag.TOP_ORG
    tags[bot] = BoundaryTag.BOT_ORG
    order = np.lexsort(tuple(np.sort(facets, axis=1).T[::-1]))
    return facets[order], tags[order]


def build_structured_mesh(extent, counts):
    """Uniform simplicial mesh of ``[0, extent[0]] x ... `` with ``counts`` nodes per axis.

    2D grids split each quad into two triangles, 3D grids split each hex
    into six tetrahedra (Kuhn subdivision), so the mesh is conforming.
    """
    extent = tuple(float(e) for e in extent)
    counts = tuple(counts)
    if len(extent) != len(counts) or len(counts) not in (2, 3):
        raise DimensionError(f"extent {extent} and counts {counts} must both have length 2 or 3")
    if any(int(c) != c or c < 2 for c in counts):
        raise DimensionError(f"node counts must be integers >= 2, got {counts}")
    if any(not np.isfinite(e) or e <= 0 for e in extent):
        raise DimensionError(f"extents must be positive, got {extent}")
    counts = tuple(int(c) for c in counts)
    axes = [np.linspace(0.0, e, c) for e, c in zip(extent, counts)]
    grids = np.meshgrid(*axes, indexing="ij")
    # row-major with x fastest: transpose so the last axis varies slowest
    vertices = np.stack([g.transpose().ravel() for g in grids], axis=1)
    cells = _cells_2d(counts) if len(counts) == 2 else _cells_3d(counts)
    vol = _simplex_volumes(vertices[cells])
    neg = vol < 0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()
    facets, tags = _boundary_facets(cells, vertices, extent)
    return Mesh(vertices, cells, facets, tags, counts, extent)


def boundary_nodes(mesh, tag):
    """Sorted vertex indices on facets carrying ``tag``.

    Nodes shared between an insulated facet and a contact facet belong to
    the contact only.
    """
    tag = BoundaryTag(tag)
    nodes = np.unique(mesh.facets[mesh.facet_tags == tag])
    if tag is BoundaryTag.INS:
        contacts = np.unique(mesh.facets[mesh.facet_tags != BoundaryTag.INS])
        nodes = np.setdiff1d(nodes, contacts)
    return nodes


def element_geometry(mesh, cell):
    """Measure and basis gradients of one cell."""
    if not 0 <= cell < mesh.num_cells:
        raise IndexError(f"cell {cell} out of range")
    pts = mesh.vertices[mesh.cells[cell]][None]
    vol = abs(float(_simplex_volumes(pts)[0]))
    scale = max(np.ptp(pts[0], axis=0).max(), 1e-300)
    if vol <= 1e-14 * scale ** mesh.dim:
        raise GeometryError(f"cell {cell} is degenerate (volume {vol:g})")
    return ElementGeometry(vol, mesh.grad_basis[cell].copy())


def mesh_from_simplices(vertices, cells):
    """Wrap an arbitrary list of simplices (used for single-element checks)."""
    vertices = np.asarray(vertices, dtype=float)
    cells = np.atleast_2d(np.asarray(cells, dtype=np.int64))
    vol = _simplex_volumes(vertices[cells])
    neg = vol < 0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    ext = tuple(hi - lo)
    dim = vertices.shape[1]
    return Mesh(vertices, cells, np.zeros((0, dim), dtype=np.int64), np.zeros(0, dtype=np.int64),
                (0,) * dim, ext)
