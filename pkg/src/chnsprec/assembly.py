"""Finite-element assembly for the Taylor-Hood / P1 discretisation.

All element integrals use one 7-point symmetric rule exact for degree 5.
Element contributions are computed in vectorised form and summed into CSR
matrices in a fixed order, so repeated assembly is bit-for-bit reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import DofMap, Mesh2D
from .physics import (interp_density, interp_viscosity, potential_Wprime_plus,
                      potential_Wsecond_plus)


def _dunavant5():
    r15 = np.sqrt(15.0)
    a1, a2 = (6.0 - r15) / 21.0, (9.0 + 2.0 * r15) / 21.0
    b1, b2 = (6.0 + r15) / 21.0, (9.0 - 2.0 * r15) / 21.0
    wa, wb = (155.0 - r15) / 1200.0, (155.0 + r15) / 1200.0
    bary = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [a2, a1, a1], [a1, a2, a1], [a1, a1, a2],
        [b2, b1, b1], [b1, b2, b1], [b1, b1, b2],
    ])
    weights = np.array([9 / 40, wa, wa, wa, wb, wb, wb])
    return bary, weights


QUAD_BARY, QUAD_WEIGHTS = _dunavant5()


def _p2_reference(lam):
    """P2 basis values and derivatives with respect to the barycentric
    coordinates, at points ``lam`` of shape (nq, 3)."""
    l0, l1, l2 = lam.T
    vals = np.column_stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ])
    nq = len(lam)
    dlam = np.zeros((nq, 6, 3))
    dlam[:, 0, 0] = 4 * l0 - 1
    dlam[:, 1, 1] = 4 * l1 - 1
    dlam[:, 2, 2] = 4 * l2 - 1
    dlam[:, 3, 0], dlam[:, 3, 1] = 4 * l1, 4 * l0
    dlam[:, 4, 1], dlam[:, 4, 2] = 4 * l2, 4 * l1
    dlam[:, 5, 2], dlam[:, 5, 0] = 4 * l0, 4 * l2
    return vals, dlam


class FEData:
    """Per-element geometry and basis data at the quadrature points."""

    def __init__(self, mesh: Mesh2D):
        self.mesh = mesh
        p = mesh.vertices[mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(det <= 0):
            raise ValueError("mesh contains degenerate or clockwise triangles")
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        g = np.empty((len(det), 3, 2))
        g[:, 1] = inv[:, 0]
        g[:, 2] = inv[:, 1]
        g[:, 0] = -g[:, 1] - g[:, 2]

        self.area = 0.5 * det
        self.wdx = self.area[:, None] * QUAD_WEIGHTS[None, :]          # (nt, nq)
        self.p1_vals = QUAD_BARY.copy()                                  # (nq, 3)
        self.p1_grads = g                                                # (nt, 3, 2)
        self.p2_vals, dlam = _p2_reference(QUAD_BARY)                    # (nq, 6)
        self.p2_grads = np.einsum("qik,tkd->tqid", dlam, g)              # (nt, nq, 6, 2)
        self.qp = np.einsum("qk,tkd->tqd", QUAD_BARY, p)                 # (nt, nq, 2)
        self.p1_dofs = mesh.triangles
        self.p2_dofs = mesh.p2_triangles

    # field evaluation -----------------------------------------------------

    def p1_at_qp(self, field):
        field = np.asarray(field, dtype=float)
        if field.ndim == 0:
            return np.full(self.wdx.shape, float(field))
        return field[self.p1_dofs] @ self.p1_vals.T

    def p1_grad(self, field):
        """Piecewise-constant gradient of a P1 field, shape (nt, 2)."""
        return np.einsum("ti,tid->td", np.asarray(field, dtype=float)[self.p1_dofs],
                         self.p1_grads)

    def p2vec_at_qp(self, v):
        """Values (nt, nq, 2) and gradients (nt, nq, comp, deriv) of a P2
        vector field stored component-blocked."""
        n = self.mesh.n_p2
        comps = [np.asarray(v, dtype=float)[c * n:(c + 1) * n][self.p2_dofs] for c in (0, 1)]
        vals = np.stack([c @ self.p2_vals.T for c in comps], axis=-1)
        grads = np.stack([np.einsum("ti,tqid->tqd", c, self.p2_grads) for c in comps],
                         axis=2)
        return vals, grads


@lru_cache(maxsize=16)
def fe_data(mesh: Mesh2D) -> FEData:
    return FEData(mesh)


# scatter helpers -------------------------------------------------------------

def _scatter(rows, cols, local, shape):
    a, b = rows.shape[1], cols.shape[1]
    r = np.broadcast_to(rows[:, :, None], (len(rows), a, b)).ravel()
    c = np.broadcast_to(cols[:, None, :], (len(cols), a, b)).ravel()
    mat = sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _scatter_vec(rows, local, n):
    return np.bincount(rows.ravel(), weights=local.ravel(), minlength=n)


def _weight_qp(fe, weight):
    if weight is None:
        return np.ones_like(fe.wdx)
    w = np.asarray(weight, dtype=float)
    if w.shape == fe.wdx.shape:
        return w
    return fe.p1_at_qp(w)


def _vector_p2(fe, blocks):
    """Assemble a 2x2 array of scalar P2 local matrices into a vector operator."""
    n = fe.mesh.n_p2
    out = [[None, None], [None, None]]
    for d in (0, 1):
        for c in (0, 1):
            if blocks[d][c] is None:
                out[d][c] = sp.csr_matrix((n, n))
            else:
                out[d][c] = _scatter(fe.p2_dofs, fe.p2_dofs, blocks[d][c], (n, n))
    mat = sp.bmat(out, format="csr")
    mat.sort_indices()
    return mat


def _keep(mask):
    return sp.diags((~mask).astype(float), format="csr")


def constrain_rows_cols(mat, row_mask=None, col_mask=None):
    """Zero the rows/columns flagged in the masks."""
    out = mat
    if row_mask is not None:
        out = _keep(row_mask) @ out
    if col_mask is not None:
        out = out @ _keep(col_mask)
    out = sp.csr_matrix(out)
    out.eliminate_zeros()
    out.sort_indices()
    return out


# P1 operators ----------------------------------------------------------------

def assemble_mass_p1(mesh: Mesh2D, weight=None, lumped: bool = False):
    """Weighted P1 mass matrix ``(w b_j, b_i)``; ``lumped`` returns the
    row-sum diagonal."""
    fe = fe_data(mesh)
    wq = _weight_qp(fe, weight) * fe.wdx
    local = np.einsum("tq,qi,qj->tij", wq, fe.p1_vals, fe.p1_vals)
    n = mesh.n_vertices
    mat = _scatter(fe.p1_dofs, fe.p1_dofs, local, (n, n))
    if lumped:
        return sp.diags(np.asarray(mat.sum(axis=1)).ravel(), format="csr")
    return mat


def assemble_stiff_p1(mesh: Mesh2D, weight=None):
    fe = fe_data(mesh)
    wt = (_weight_qp(fe, weight) * fe.wdx).sum(axis=1)
    local = wt[:, None, None] * np.einsum("tid,tjd->tij", fe.p1_grads, fe.p1_grads)
    n = mesh.n_vertices
    return _scatter(fe.p1_dofs, fe.p1_dofs, local, (n, n))


def assemble_convection_p1(mesh: Mesh2D, advector_qp):
    """Skew-symmetric P1 convection ``a(u, b_j, b_i)``."""
    fe = fe_data(mesh)
    ug = np.einsum("tqd,tjd->tqj", advector_qp, fe.p1_grads)      # u . grad b_j
    half = np.einsum("tq,tqj,qi->tij", fe.wdx, ug, fe.p1_vals)
    local = 0.5 * (half - half.transpose(0, 2, 1))
    n = mesh.n_vertices
    return _scatter(fe.p1_dofs, fe.p1_dofs, local, (n, n))


def assemble_lambda(mesh: Mesh2D, phi, s: float, lumped: bool = False):
    """Penalty curvature matrix ``(W''_+(phi) b_j, b_i)``.

    The lumped variant evaluates the indicator at the vertices, so that
    ``M_L^{-1/2} Lambda_0 M_L^{-1/2}`` is a 0/1 diagonal.
    """
    phi = np.asarray(phi, dtype=float)
    if lumped:
        ml = np.asarray(assemble_mass_p1(mesh).sum(axis=1)).ravel()
        return sp.diags(ml * potential_Wsecond_plus(phi, s), format="csr")
    fe = fe_data(mesh)
    wq = potential_Wsecond_plus(fe.p1_at_qp(phi), s) * fe.wdx
    local = np.einsum("tq,qi,qj->tij", wq, fe.p1_vals, fe.p1_vals)
    n = mesh.n_vertices
    mat = _scatter(fe.p1_dofs, fe.p1_dofs, local, (n, n))
    mat.eliminate_zeros()
    return mat


# P2 velocity operators -------------------------------------------------------

def assemble_mass_p2(mesh: Mesh2D, weight=None):
    """Weighted scalar P2 mass matrix (no constraints)."""
    fe = fe_data(mesh)
    wq = _weight_qp(fe, weight) * fe.wdx
    local = np.einsum("tq,qi,qj->tij", wq, fe.p2_vals, fe.p2_vals)
    n = mesh.n_p2
    return _scatter(fe.p2_dofs, fe.p2_dofs, local, (n, n))


def assemble_velocity_blocks(mesh: Mesh2D, dof: DofMap | None, rho_km1, rho_km2,
                             eta_km1, advector_qp, tau: float):
    """Return ``(M2, Ta, K2)``.

    With a DofMap the constrained rows/columns are eliminated; ``M2`` carries
    the unit diagonal on constrained DOFs so that ``A = M2 + Ta + K2``.
    """
    if not tau > 0:
        raise ValueError("time step must be positive")
    fe = fe_data(mesh)
    wm = 0.5 * (fe.p1_at_qp(rho_km1) + fe.p1_at_qp(rho_km2)) / tau * fe.wdx
    ms = np.einsum("tq,qi,qj->tij", wm, fe.p2_vals, fe.p2_vals)
    M2 = _vector_p2(fe, [[ms, None], [None, ms]])

    ug = np.einsum("tqd,tqjd->tqj", advector_qp, fe.p2_grads)
    half = np.einsum("tq,tqj,qi->tij", fe.wdx, ug, fe.p2_vals)
    conv = 0.5 * (half - half.transpose(0, 2, 1))
    Ta = _vector_p2(fe, [[conv, None], [None, conv]])

    we = fe.p1_at_qp(eta_km1) * fe.wdx
    lap = np.einsum("tq,tqid,tqjd->tij", we, fe.p2_grads, fe.p2_grads)
    cross = [[np.einsum("tq,tqi,tqj->tij", we, fe.p2_grads[..., c], fe.p2_grads[..., d])
              for c in (0, 1)] for d in (0, 1)]
    K2 = _vector_p2(fe, [[lap + cross[0][0], cross[0][1]],
                         [cross[1][0], lap + cross[1][1]]])

    if dof is not None:
        mask = dof.dirichlet_mask
        M2 = constrain_rows_cols(M2, mask, mask) + sp.diags(mask.astype(float))
        M2 = sp.csr_matrix(M2)
        M2.sort_indices()
        Ta = constrain_rows_cols(Ta, mask, mask)
        K2 = constrain_rows_cols(K2, mask, mask)
    return M2, Ta, K2


def assemble_coupling(mesh: Mesh2D, dof: DofMap | None, phi_km1):
    """Return ``(B, U, T)`` with
    ``B_ij = -(div b2_j, b1_i)``, ``U_ij = -(b1_j grad phi, b2_i)``,
    ``T_ij = (b2_j phi, grad b1_i)``."""
    fe = fe_data(mesh)
    n1, n = mesh.n_vertices, mesh.n_p2
    gphi = fe.p1_grad(phi_km1)                                        # (nt, 2)
    phiq = fe.p1_at_qp(phi_km1)
    Bb, Ub, Tb = [], [], []
    for c in (0, 1):
        lb = -np.einsum("tq,qi,tqj->tij", fe.wdx, fe.p1_vals, fe.p2_grads[..., c])
        Bb.append(_scatter(fe.p1_dofs, fe.p2_dofs, lb, (n1, n)))
        lu = -np.einsum("tq,t,qj,qi->tij", fe.wdx, gphi[:, c], fe.p1_vals, fe.p2_vals)
        Ub.append(_scatter(fe.p2_dofs, fe.p1_dofs, lu, (n, n1)))
        lt = np.einsum("tq,qj,tq,ti->tij", fe.wdx, fe.p2_vals, phiq, fe.p1_grads[:, :, c])
        Tb.append(_scatter(fe.p1_dofs, fe.p2_dofs, lt, (n1, n)))
    B = sp.hstack(Bb, format="csr")
    U = sp.vstack(Ub, format="csr")
    T = sp.hstack(Tb, format="csr")
    if dof is not None:
        mask = dof.dirichlet_mask
        B = constrain_rows_cols(B, col_mask=mask)
        U = constrain_rows_cols(U, row_mask=mask)
        T = constrain_rows_cols(T, col_mask=mask)
    for m in (B, U, T):
        m.sort_indices()
    return B, U, T


def assemble_pressure_ops(mesh: Mesh2D, rho_km1, rho_km2, eta_km1, advector_qp, tau):
    """Pressure-space operators ``(Mp, Kp, Ap)`` for the PCD Schur approximation.

    ``Ap = M_{2,p} + T_{a,p} + K_{2,p}`` where the viscous part is the scalar
    form ``(eta grad b1_j, grad b1_i)``.
    """
    fe = fe_data(mesh)
    Mp = assemble_mass_p1(mesh)
    Kp = assemble_stiff_p1(mesh)
    wm = 0.5 * (fe.p1_at_qp(rho_km1) + fe.p1_at_qp(rho_km2)) / tau
    Ap = (assemble_mass_p1(mesh, wm) + assemble_convection_p1(mesh, advector_qp)
          + assemble_stiff_p1(mesh, fe.p1_at_qp(eta_km1)))
    Ap = sp.csr_matrix(Ap)
    Ap.sort_indices()
    return Mp, Kp, Ap


# fields at quadrature points ------------------------------------------------

def flux_J(mesh: Mesh2D, mu, params):
    """``J = -(rho2 - rho1)/2 * b * grad mu``, constant per triangle, (nt, 2)."""
    fe = fe_data(mesh)
    return -0.5 * (params.rho2 - params.rho1) * params.b * fe.p1_grad(mu)


def advector_qp(mesh: Mesh2D, phi_km1, v_km1, mu_km1, params):
    """``rho^{k-1} v^{k-1} + J^{k-1}`` at the quadrature points, (nt, nq, 2)."""
    fe = fe_data(mesh)
    rho = interp_density(fe.p1_at_qp(phi_km1), params.rho1, params.rho2)
    vq, _ = fe.p2vec_at_qp(v_km1)
    return rho[..., None] * vq + flux_J(mesh, mu_km1, params)[:, None, :]


def load_p2(mesh: Mesh2D, weight_qp, direction):
    """Vector load ``(w * direction, b2_i)``."""
    fe = fe_data(mesh)
    loc = np.einsum("tq,qi->ti", weight_qp * fe.wdx, fe.p2_vals)
    n = mesh.n_p2
    base = _scatter_vec(fe.p2_dofs, loc, n)
    return np.concatenate([direction[0] * base, direction[1] * base])


def load_p1(mesh: Mesh2D, weight_qp):
    fe = fe_data(mesh)
    loc = np.einsum("tq,qi->ti", weight_qp * fe.wdx, fe.p1_vals)
    return _scatter_vec(fe.p1_dofs, loc, mesh.n_vertices)


@dataclass
class AssemblyOutputs:
    A: sp.csr_matrix
    M2: sp.csr_matrix
    Ta: sp.csr_matrix
    K2: sp.csr_matrix
    B: sp.csr_matrix
    U: sp.csr_matrix
    T: sp.csr_matrix
    M1: sp.csr_matrix
    K1: sp.csr_matrix
    Lambda: sp.csr_matrix
    Mp: sp.csr_matrix
    Kp: sp.csr_matrix
    Ap: sp.csr_matrix
    F1: np.ndarray
    F2: np.ndarray
    F3: np.ndarray
    F4: np.ndarray


def assemble_residual(mesh: Mesh2D, dof: DofMap, state, history, params,
                      lumped_lambda: bool = False, pressure_ops: bool = True):
    """Assemble every matrix of the linearised step and the residuals
    ``F1..F4`` of the fully discrete scheme at ``state``.

    ``state`` needs attributes ``v, p, phi, mu``; ``history`` needs
    ``phi_km2, phi_km1, mu_km1, v_km1``.
    """
    fe = fe_data(mesh)
    tau = params.tau
    rho_km1 = interp_density(history.phi_km1, params.rho1, params.rho2)
    rho_km2 = interp_density(history.phi_km2, params.rho1, params.rho2)
    eta_km1 = interp_viscosity(history.phi_km1, params.eta1, params.eta2)
    adv = advector_qp(mesh, history.phi_km1, history.v_km1, history.mu_km1, params)

    M2, Ta, K2 = assemble_velocity_blocks(mesh, dof, rho_km1, rho_km2, eta_km1, adv, tau)
    A = sp.csr_matrix(M2 + Ta + K2)
    A.sort_indices()
    B, U, T = assemble_coupling(mesh, dof, history.phi_km1)
    M1 = assemble_mass_p1(mesh)
    K1 = assemble_stiff_p1(mesh)
    Lam = assemble_lambda(mesh, state.phi, params.s, lumped=lumped_lambda)
    if pressure_ops:
        Mp, Kp, Ap = assemble_pressure_ops(mesh, rho_km1, rho_km2, eta_km1, adv, tau)
    else:
        Mp = Kp = Ap = None

    mask = dof.dirichlet_mask
    v = dof.project(state.v)
    # (rho^{k-2} v^{k-1}, w) / tau
    m_old = assemble_mass_p2(mesh, fe.p1_at_qp(rho_km2) / tau)
    n = mesh.n_p2
    v_old = np.asarray(history.v_km1, dtype=float)
    inertia_old = np.concatenate([m_old @ v_old[:n], m_old @ v_old[n:]])
    gravity = load_p2(mesh, fe.p1_at_qp(rho_km1), params.g)
    F1 = A @ v + B.T @ state.p + U @ state.mu - inertia_old - gravity
    F1[mask] = 0.0
    F2 = B @ v
    F3 = M1 @ (state.phi - history.phi_km1) / tau + params.b * (K1 @ state.mu) - T @ v
    wp = load_p1(mesh, potential_Wprime_plus(fe.p1_at_qp(state.phi), params.s))
    F4 = (params.sigma * params.eps * (K1 @ state.phi)
          + params.sigma / params.eps * (wp - M1 @ history.phi_km1)
          - M1 @ state.mu)
    return AssemblyOutputs(A=A, M2=M2, Ta=Ta, K2=K2, B=B, U=U, T=T, M1=M1, K1=K1,
                           Lambda=Lam, Mp=Mp, Kp=Kp, Ap=Ap, F1=F1, F2=F2, F3=F3, F4=F4)
