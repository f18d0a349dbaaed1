import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chnsprec.assembly import (QUAD_WEIGHTS, advector_qp, assemble_convection_p1,
                               assemble_coupling, assemble_lambda, assemble_mass_p1,
                               assemble_mass_p2, assemble_stiff_p1, assemble_velocity_blocks,
                               fe_data, flux_J, load_p1)
from chnsprec.mesh import build_rect_mesh
from chnsprec.physics import BENCHMARK1


def _velocity_blocks(mesh, dof=None, rng=None, adv_scale=1.0):
    fe = fe_data(mesh)
    rng = rng or np.random.default_rng(0)
    rho = 500 + 100 * rng.random(mesh.n_vertices)
    eta = 1 + rng.random(mesh.n_vertices)
    adv = adv_scale * rng.standard_normal(fe.qp.shape)
    return assemble_velocity_blocks(mesh, dof, rho, rho, eta, adv, 2e-3)


def test_quadrature_weights_sum_to_one():
    assert QUAD_WEIGHTS.sum() == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5))
def test_quadrature_exact_to_degree_five(a, b):
    if a + b > 5:
        return
    mesh = build_rect_mesh(1.0, 2.0, 3, 2)
    fe = fe_data(mesh)
    approx = np.sum(fe.qp[..., 0] ** a * fe.qp[..., 1] ** b * fe.wdx)
    exact = (1.0 / (a + 1)) * (2.0 ** (b + 1) / (b + 1))
    assert approx == pytest.approx(exact, rel=1e-13)


def test_mass_totals(tiny):
    mesh, _ = tiny
    assert assemble_mass_p1(mesh).sum() == pytest.approx(2.0, abs=1e-12)
    assert assemble_mass_p2(mesh).sum() == pytest.approx(2.0, abs=1e-12)
    lumped = assemble_mass_p1(mesh, lumped=True)
    assert lumped.nnz == mesh.n_vertices
    assert lumped.sum() == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(load_p1(mesh, np.ones(fe_data(mesh).wdx.shape)),
                       assemble_mass_p1(mesh).sum(axis=1).A1)


def test_stiffness(tiny):
    mesh, _ = tiny
    K1 = assemble_stiff_p1(mesh)
    assert np.abs(K1 @ np.ones(mesh.n_vertices)).max() < 1e-13
    x = mesh.vertices[:, 0]
    assert x @ K1 @ x == pytest.approx(2.0, abs=1e-12)
    assert abs(K1 - K1.T).max() < 1e-14


def test_convection_antisymmetric(tiny):
    mesh, _ = tiny
    rng = np.random.default_rng(3)
    C = assemble_convection_p1(mesh, rng.standard_normal(fe_data(mesh).qp.shape))
    assert abs(C + C.T).max() < 1e-14
    _, Ta, _ = _velocity_blocks(mesh)
    for _ in range(3):
        x = rng.standard_normal(Ta.shape[0])
        assert abs(x @ Ta @ x) < 1e-12 * (1 + np.linalg.norm(x) ** 2)


def test_constrained_blocks(tiny):
    mesh, dof = tiny
    M2, Ta, K2 = _velocity_blocks(mesh, dof)
    mask = dof.dirichlet_mask
    assert np.allclose(M2.diagonal()[mask], 1.0)
    for m in (Ta, K2):
        assert abs(m[mask]).max() == 0 and abs(m[:, mask]).max() == 0
    A = (M2 + Ta + K2).toarray()
    sym = 0.5 * (A + A.T)
    assert np.linalg.eigvalsh(sym).min() > 0


def test_viscous_block_rigid_motions(tiny):
    mesh, _ = tiny
    _, _, K2 = _velocity_blocks(mesh)
    x, y = mesh.p2_nodes.T
    for v in (np.concatenate([-y, x]), np.concatenate([np.ones_like(x), 0 * x])):
        assert abs(v @ K2 @ v) < 1e-11
    assert abs(K2 - K2.T).max() < 1e-12
    shear = np.concatenate([y, 0 * x])
    assert shear @ K2 @ shear > 0


def test_coupling_blocks(tiny):
    mesh, dof = tiny
    n1 = mesh.n_vertices
    B, U, T = assemble_coupling(mesh, dof, np.ones(n1))
    assert abs(B - T).max() < 1e-12
    assert U.nnz == 0 or abs(U).max() < 1e-14
    _, U3, _ = assemble_coupling(mesh, dof, 3.0 * np.ones(n1))
    assert abs(U3).max() < 1e-13
    # divergence-free rotation is annihilated by B (no constraints)
    Bf, _, _ = assemble_coupling(mesh, None, np.ones(n1))
    x, y = mesh.p2_nodes.T
    assert np.abs(Bf @ np.concatenate([-y, x])).max() < 1e-13
    # constrained columns are empty
    assert abs(B[:, dof.dirichlet_mask]).max() == 0
    assert abs(U[dof.dirichlet_mask]).max() == 0


def test_flux():
    mesh = build_rect_mesh(1.0, 1.0, 3, 3)
    p = BENCHMARK1
    assert np.abs(flux_J(mesh, np.full(mesh.n_vertices, 2.0), p)).max() < 1e-12
    assert np.abs(flux_J(mesh, mesh.vertices[:, 0], p.with_(rho2=p.rho1))).max() == 0
    J = flux_J(mesh, mesh.vertices[:, 0], p)
    assert np.allclose(J[:, 0], -(p.rho2 - p.rho1) * p.b / 2)
    assert np.allclose(J[:, 1], 0.0, atol=1e-15)
    zero_v = np.zeros(2 * mesh.n_p2)
    adv = advector_qp(mesh, np.zeros(mesh.n_vertices), zero_v, np.ones(mesh.n_vertices), p)
    assert np.abs(adv).max() < 1e-12


def test_lambda(tiny):
    mesh, _ = tiny
    rng = np.random.default_rng(1)
    inside = rng.uniform(-1, 1, mesh.n_vertices)
    assert assemble_lambda(mesh, inside, 1e6).nnz == 0
    phi = inside.copy()
    phi[:5] = 1.3
    assert assemble_lambda(mesh, phi, 0.0).nnz == 0
    L = assemble_lambda(mesh, phi, 1e4, lumped=True)
    ml = assemble_mass_p1(mesh, lumped=True).diagonal()
    assert np.allclose(L.diagonal()[:5], 1e4 * ml[:5])
    assert np.all(L.diagonal()[5:] == 0)
    Lc = assemble_lambda(mesh, phi, 1e4)
    assert abs(Lc - Lc.T).max() < 1e-9
    assert np.linalg.eigvalsh(Lc.toarray()).min() > -1e-9


def test_assembly_is_reproducible(tiny):
    mesh, dof = tiny
    a = _velocity_blocks(mesh, dof, np.random.default_rng(5))
    b = _velocity_blocks(mesh, dof, np.random.default_rng(5))
    for x, y in zip(a, b):
        assert np.array_equal(x.indices, y.indices) and np.array_equal(x.data, y.data)
