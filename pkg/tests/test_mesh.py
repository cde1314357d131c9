import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opvsim.errors import DimensionError, GeometryError
from opvsim.mesh import (BoundaryTag, boundary_nodes, build_structured_mesh, element_geometry,
                         mesh_from_simplices)


def test_smallest_grid_counts():
    m = build_structured_mesh((10, 10), (2, 2))
    assert m.num_vertices == 4
    assert m.num_cells == 2
    tags = list(m.facet_tags)
    assert len(tags) == 4
    assert tags.count(BoundaryTag.TOP_ORG) == 1
    assert tags.count(BoundaryTag.BOT_ORG) == 1
    assert tags.count(BoundaryTag.INS) == 2


def test_reference_2d_grid_size():
    assert build_structured_mesh((10, 10), (200, 200)).num_vertices == 40000


def test_reference_3d_grid_size():
    m = build_structured_mesh((10, 10, 10), (25, 25, 25))
    assert m.num_vertices == 15625
    assert m.num_cells == 6 * 24 ** 3


def test_top_nodes_of_smallest_grid():
    m = build_structured_mesh((10, 10), (2, 2))
    top = boundary_nodes(m, BoundaryTag.TOP_ORG)
    assert len(top) == 2
    assert np.all(m.vertices[top, 1] == 10.0)


def test_insulated_nodes_exclude_corners():
    m = build_structured_mesh((10, 10), (3, 3))
    ins = boundary_nodes(m, BoundaryTag.INS)
    assert len(ins) == 2
    np.testing.assert_allclose(m.vertices[ins, 1], [5.0, 5.0])
    np.testing.assert_allclose(sorted(m.vertices[ins, 0]), [0.0, 10.0])


def test_bottom_nodes_3d():
    m = build_structured_mesh((10, 10, 10), (2, 2, 2))
    bot = boundary_nodes(m, BoundaryTag.BOT_ORG)
    assert len(bot) == 4
    assert np.all(m.vertices[bot, 2] == 0.0)


def test_reference_triangle_geometry():
    m = mesh_from_simplices([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)])
    g = element_geometry(m, 0)
    assert g.volume == pytest.approx(0.5)
    np.testing.assert_allclose(g.grad_basis, [(-1, -1), (1, 0), (0, 1)], atol=1e-14)


def test_scaled_triangle_geometry():
    m = mesh_from_simplices([(0, 0), (2, 0), (0, 2)], [(0, 1, 2)])
    g = element_geometry(m, 0)
    assert g.volume == pytest.approx(2.0)
    np.testing.assert_allclose(g.grad_basis, 0.5 * np.array([(-1, -1), (1, 0), (0, 1)]),
                               atol=1e-14)


def test_reference_tetrahedron_volume():
    m = mesh_from_simplices([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)], [(0, 1, 2, 3)])
    assert element_geometry(m, 0).volume == pytest.approx(1 / 6)


def test_degenerate_cell_rejected():
    m = mesh_from_simplices([(0, 0), (1, 0), (2, 0)], [(0, 1, 2)])
    with pytest.raises(GeometryError):
        element_geometry(m, 0)


@pytest.mark.parametrize("extent, counts", [((10, 10), (1, 4)), ((10, 10), (4,)),
                                            ((0, 10), (3, 3)), ((10, 10, 10, 10), (2, 2, 2, 2))])
def test_invalid_grids(extent, counts):
    with pytest.raises(DimensionError):
        build_structured_mesh(extent, counts)


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(2, 7), ny=st.integers(2, 7), lx=st.floats(0.5, 20), ly=st.floats(0.5, 20))
def test_2d_invariants(nx, ny, lx, ly):
    m = build_structured_mesh((lx, ly), (nx, ny))
    assert np.all(m.volumes > 0)
    assert m.volumes.sum() == pytest.approx(lx * ly, rel=1e-12)
    np.testing.assert_allclose(m.grad_basis.sum(axis=1), 0.0, atol=1e-12 / min(lx, ly))
    fm = m.facet_measures
    assert fm[m.facet_tags == BoundaryTag.TOP_ORG].sum() == pytest.approx(lx)
    assert fm[m.facet_tags == BoundaryTag.BOT_ORG].sum() == pytest.approx(lx)
    assert fm[m.facet_tags == BoundaryTag.INS].sum() == pytest.approx(2 * ly)


@settings(max_examples=10, deadline=None)
@given(n=st.integers(2, 5), lz=st.floats(1, 10))
def test_3d_invariants(n, lz):
    m = build_structured_mesh((2.0, 3.0, lz), (n, n + 1, n))
    assert np.all(m.volumes > 0)
    assert m.volumes.sum() == pytest.approx(6.0 * lz, rel=1e-12)
    fm = m.facet_measures
    assert fm[m.facet_tags == BoundaryTag.TOP_ORG].sum() == pytest.approx(6.0)
    assert fm[m.facet_tags == BoundaryTag.INS].sum() == pytest.approx(2 * (2.0 + 3.0) * lz)


def test_vertical_axis_is_last_and_x_fastest():
    m = build_structured_mesh((4, 2), (3, 2))
    np.testing.assert_allclose(m.vertices[:3], [(0, 0), (2, 0), (4, 0)])
    np.testing.assert_allclose(m.vertices[3:, 1], 2.0)
