import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chnsprec.mesh import (FREESLIP, NOSLIP, NOSLIP_BC, build_dofmap, build_rect_mesh)


def test_counts_small():
    m = build_rect_mesh(1.0, 2.0, 4, 8)
    assert m.n_vertices == 45
    assert m.n_triangles == 64
    assert m.n_edges == 108
    assert m.n_p2 == 153


def test_benchmark_size():
    m = build_rect_mesh(1.0, 2.0, 16, 32)
    assert m.n_vertices == 561
    d = build_dofmap(m)
    assert d.n_total == 5973


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.floats(0.1, 5), st.floats(0.1, 5))
def test_mesh_properties(nx, ny, w, h):
    m = build_rect_mesh(w, h, nx, ny)
    assert np.all(m.signed_areas > 0)
    assert m.signed_areas.sum() == pytest.approx(w * h)
    # Euler characteristic of a disc
    assert m.n_vertices - m.n_edges + m.n_triangles == 1
    counts = m.interior_edge_counts()
    assert set(np.unique(counts)) <= {1, 2}
    boundary = np.zeros(m.n_edges, bool)
    for side in ("bottom", "top", "left", "right"):
        boundary |= m.edge_tags[side]
    assert np.array_equal(counts == 1, boundary)


def test_refinement_scaling():
    a = build_rect_mesh(1.0, 2.0, 4, 8)
    b = build_rect_mesh(1.0, 2.0, 8, 16)
    assert b.diam.max() == pytest.approx(a.diam.max() / 2)
    assert b.signed_areas.max() == pytest.approx(a.signed_areas.max() / 4)


def test_invalid_input():
    with pytest.raises(ValueError):
        build_rect_mesh(1.0, 2.0, 0, 4)
    with pytest.raises(ValueError):
        build_rect_mesh(-1.0, 2.0, 2, 4)
    m = build_rect_mesh(1.0, 1.0, 2, 2)
    with pytest.raises(ValueError):
        build_dofmap(m, {"top": "slip"})


def test_boundary_constraints(tiny):
    mesh, dof = tiny
    n = mesh.n_p2
    x, y = mesh.p2_nodes.T
    ux, uy = dof.dirichlet_mask[:n], dof.dirichlet_mask[n:]
    # normal components vanish on every wall
    assert np.all(uy[(y == 0) | (y == 2)])
    assert np.all(ux[(x == 0) | (x == 1)])
    # tangential: fixed on no-slip walls, free on the interior of slip walls
    assert np.all(ux[(y == 0) | (y == 2)])
    side = ((x == 0) | (x == 1)) & (y > 0) & (y < 2)
    assert not np.any(uy[side])
    interior = (x > 0) & (x < 1) & (y > 0) & (y < 2)
    assert not np.any(dof.dirichlet_mask[:n][interior])


def test_noslip_everywhere():
    m = build_rect_mesh(1.0, 1.0, 3, 3)
    d = build_dofmap(m, NOSLIP_BC)
    n = m.n_p2
    on_boundary = np.zeros(n, bool)
    for side in ("bottom", "top", "left", "right"):
        on_boundary |= m.p2_boundary_mask(side)
    assert np.array_equal(d.dirichlet_mask[:n], on_boundary)
    assert np.array_equal(d.dirichlet_mask[n:], on_boundary)
    assert NOSLIP != FREESLIP


def test_project(tiny):
    _, dof = tiny
    v = np.ones(dof.n2)
    pv = dof.project(v)
    assert np.all(pv[dof.dirichlet_mask] == 0)
    assert np.all(pv[dof.free] == 1)
    assert v.sum() == dof.n2
