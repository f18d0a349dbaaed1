"""Discrete two-phase model: states, the linearised block system of one
semismooth Newton step, the Newton loop, the discrete energy and the CFL
number.

The block system is written for the unknown ordering ``(v, p, mu, phi)`` and
rows ``(F1, F2, -F4, tau*F3)``; its matrix is the Newton derivative of those
rows, so a step solves ``J z = rhs`` and updates ``x <- x - z``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_residual, fe_data
from .errors import NonConvergenceError
from .mesh import DofMap, Mesh2D
from .physics import PhysParams, interp_density, interp_viscosity, potential_W

log = logging.getLogger(__name__)


@dataclass
class State:
    v: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    mu: np.ndarray

    @classmethod
    def zeros(cls, dof: DofMap) -> "State":
        return cls(np.zeros(dof.n2), np.zeros(dof.n1), np.zeros(dof.n1), np.zeros(dof.n1))

    def copy(self) -> "State":
        return State(self.v.copy(), self.p.copy(), self.phi.copy(), self.mu.copy())

    def pack(self) -> np.ndarray:
        return np.concatenate([self.v, self.p, self.mu, self.phi])

    @classmethod
    def unpack(cls, x, dof: DofMap) -> "State":
        n2, n1 = dof.n2, dof.n1
        return cls(v=x[:n2].copy(), p=x[n2:n2 + n1].copy(),
                   mu=x[n2 + n1:n2 + 2 * n1].copy(), phi=x[n2 + 2 * n1:].copy())


@dataclass
class History:
    phi_km2: np.ndarray
    phi_km1: np.ndarray
    mu_km1: np.ndarray
    v_km1: np.ndarray

    def shift(self, state: State) -> "History":
        """History for the next step once ``state`` has been accepted."""
        return History(phi_km2=self.phi_km1.copy(), phi_km1=state.phi.copy(),
                       mu_km1=state.mu.copy(), v_km1=state.v.copy())


@dataclass(eq=False)
class BlockSystem:
    """Named blocks of the linearised system plus its right-hand side."""

    mesh: Mesh2D
    dof: DofMap
    params: PhysParams
    A: sp.csr_matrix
    B: sp.csr_matrix
    U: sp.csr_matrix
    T: sp.csr_matrix
    M1: sp.csr_matrix
    K1: sp.csr_matrix
    Lambda: sp.csr_matrix
    Mp: sp.csr_matrix | None
    Kp: sp.csr_matrix | None
    Ap: sp.csr_matrix | None
    F: tuple = ()                     # residuals (F1, F2, F3, F4)
    _matrix: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        n2, n1 = self.n2, self.n1
        assert self.A.shape == (n2, n2)
        assert self.B.shape == (n1, n2) and self.T.shape == (n1, n2)
        assert self.U.shape == (n2, n1)
        for m in (self.M1, self.K1, self.Lambda):
            assert m.shape == (n1, n1)

    @property
    def n1(self) -> int:
        return self.dof.n1

    @property
    def n2(self) -> int:
        return self.dof.n2

    @property
    def n_total(self) -> int:
        return self.n2 + 3 * self.n1

    @property
    def G(self):
        """``sigma*eps*K1 + sigma/eps*Lambda``; the (3,4) block is ``-G``."""
        p = self.params
        return sp.csr_matrix(p.sigma * p.eps * self.K1 + p.sigma / p.eps * self.Lambda)

    @property
    def CT41(self):
        """Velocity column of the last block row, ``-tau*T``."""
        return -self.params.tau * self.T

    @property
    def tbK1(self):
        return self.params.tau * self.params.b * self.K1

    def A_NS(self):
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csr")

    def A_CH(self):
        return sp.bmat([[self.M1, -self.G], [self.tbK1, self.M1]], format="csr")

    def C_I(self):
        n1, n2 = self.n1, self.n2
        return sp.bmat([[self.U, sp.csr_matrix((n2, n1))],
                        [sp.csr_matrix((n1, n1)), None]], format="csr")

    def C_T(self):
        n1, n2 = self.n1, self.n2
        return sp.bmat([[sp.csr_matrix((n1, n2)), sp.csr_matrix((n1, n1))],
                        [self.CT41, None]], format="csr")

    def matrix(self):
        if self._matrix is None:
            self._matrix = sp.bmat(
                [[self.A, self.B.T, self.U, None],
                 [self.B, None, None, None],
                 [None, None, self.M1, -self.G],
                 [self.CT41, None, self.tbK1, self.M1]], format="csr")
        return self._matrix

    def rhs(self) -> np.ndarray:
        F1, F2, F3, F4 = self.F
        return np.concatenate([F1, F2, -F4, self.params.tau * F3])

    def residual_norm(self) -> float:
        return float(np.linalg.norm(np.concatenate(self.F)))

    def slices(self):
        n2, n1 = self.n2, self.n1
        return {"v": slice(0, n2), "p": slice(n2, n2 + n1),
                "mu": slice(n2 + n1, n2 + 2 * n1), "phi": slice(n2 + 2 * n1, n2 + 3 * n1)}

    def normalize_pressure(self, z) -> np.ndarray:
        """Shift the pressure block of ``z`` to zero mean value."""
        z = np.array(z, dtype=float, copy=True)
        sl = self.slices()["p"]
        w = self.M1 @ np.ones(self.n1)
        z[sl] -= (w @ z[sl]) / w.sum()
        return z


def build_newton_system(state: State, history: History, params: PhysParams,
                        mesh: Mesh2D, dof: DofMap, lumped_lambda: bool = False,
                        pressure_ops: bool = True) -> BlockSystem:
    """Newton derivative at ``state`` and the residual rows; the penalty
    block is rebuilt from ``state.phi`` (active-set update)."""
    out = assemble_residual(mesh, dof, state, history, params,
                            lumped_lambda=lumped_lambda, pressure_ops=pressure_ops)
    return BlockSystem(mesh=mesh, dof=dof, params=params, A=out.A, B=out.B, U=out.U,
                       T=out.T, M1=out.M1, K1=out.K1, Lambda=out.Lambda, Mp=out.Mp,
                       Kp=out.Kp, Ap=out.Ap, F=(out.F1, out.F2, out.F3, out.F4))


def residual_vector(state, history, params, mesh, dof) -> np.ndarray:
    """Stacked ``(F1, F2, F3, F4)`` at ``state``."""
    out = assemble_residual(mesh, dof, state, history, params, pressure_ops=False)
    return np.concatenate([out.F1, out.F2, out.F3, out.F4])


def normalize_pressure(p, M1) -> np.ndarray:
    w = M1 @ np.ones(len(p))
    return p - (w @ p) / w.sum()


# Newton ---------------------------------------------------------------------

@dataclass
class LinearSolverConfig:
    """``kind='direct'`` uses a bordered sparse LU of the full system;
    ``kind='krylov'`` uses preconditioned FGMRES in the given mode."""

    kind: str = "direct"
    mode: str = "block-triangular"
    settings: object = None           # PrecondSettings, default when None

    def __post_init__(self):
        if self.kind not in ("direct", "krylov"):
            raise ValueError("linear solver kind must be 'direct' or 'krylov'")


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    krylov_iterations: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    active_counts: list = field(default_factory=list)
    converged: bool = False
    roundoff_stop: bool = False
    wall_time: float = 0.0

    @property
    def mean_krylov(self) -> float:
        return float(np.mean(self.krylov_iterations)) if self.krylov_iterations else 0.0


def solve_linearized(system: BlockSystem, solver: LinearSolverConfig):
    """Return ``(z, krylov_iterations, inner_iterations)``."""
    from .precond import solve_direct, solve_krylov

    if solver.kind == "direct":
        return system.normalize_pressure(solve_direct(system)), 0, []
    z, rep = solve_krylov(system, solver.mode, solver.settings)
    if not rep.converged:
        raise NonConvergenceError(
            f"FGMRES stopped after {rep.iterations} iterations at residual "
            f"{rep.final_residual:.3e}", history=rep.residual_history)
    return z, rep.iterations, rep.inner


def active_signature(phi) -> np.ndarray:
    """-1/0/+1 per node for ``phi < -1``, inside, ``phi > 1``."""
    return (phi > 1.0).astype(np.int8) - (phi < -1.0).astype(np.int8)


def step_at_roundoff(z, x, prev_active, active, rtol: float = 1e-10) -> bool:
    return (np.array_equal(prev_active, active)
            and np.max(np.abs(z)) <= rtol * (1.0 + np.max(np.abs(x))))


def semismooth_newton(history: History, params: PhysParams, mesh: Mesh2D, dof: DofMap,
                      solver: LinearSolverConfig | None = None, x0: State | None = None,
                      tol_abs: float = 1e-9, tol_rel: float = 1e-9, maxit: int = 25,
                      lumped_lambda: bool = False):
    """Undamped semismooth Newton for one time step.

    Stops when ``|F(x)|_2 <= max(tol_abs, tol_rel*|F(x0)|_2)``.  With a large
    penalty the attainable residual is limited by roundoff in the penalty
    term, so the iteration also stops once the active set repeats and the
    step is at roundoff level relative to the iterate; the residual is then
    at its floor and ``report.roundoff_stop`` is set.  Raises
    NonConvergenceError (carrying the residual history and the last iterate)
    after ``maxit`` steps.
    """
    solver = solver or LinearSolverConfig()
    t0 = time.perf_counter()
    if x0 is None:
        x0 = State(v=dof.project(history.v_km1), p=np.zeros(dof.n1),
                   phi=history.phi_km1.copy(), mu=history.mu_km1.copy())
    state = x0.copy()
    report = NewtonReport()
    need_pcd = solver.kind == "krylov"
    system = build_newton_system(state, history, params, mesh, dof, lumped_lambda, need_pcd)
    res = system.residual_norm()
    report.residual_norms.append(res)
    thresh = max(tol_abs, tol_rel * res)
    active = active_signature(state.phi)
    while res > thresh:
        if report.iterations >= maxit:
            raise NonConvergenceError(
                f"semismooth Newton did not converge in {maxit} iterations "
                f"(|F| = {res:.3e})", history=report.residual_norms, partial=state)
        report.active_counts.append(int(np.count_nonzero(np.abs(state.phi) > 1.0)))
        z, kits, inner = solve_linearized(system, solver)
        x = state.pack() - z
        state = State.unpack(x, dof)
        state.v = dof.project(state.v)
        state.p = normalize_pressure(state.p, system.M1)
        report.iterations += 1
        report.krylov_iterations.append(kits)
        report.inner_iterations.append(inner)
        system = build_newton_system(state, history, params, mesh, dof, lumped_lambda,
                                     need_pcd)
        res = system.residual_norm()
        report.residual_norms.append(res)
        prev, active = active, active_signature(state.phi)
        if res > thresh and step_at_roundoff(z, x, prev, active):
            report.roundoff_stop = True
            break
    report.converged = True
    report.wall_time = time.perf_counter() - t0
    return state, report


# energy ---------------------------------------------------------------------

def _kinetic(mesh, rho_nodal, v) -> float:
    fe = fe_data(mesh)
    vq, _ = fe.p2vec_at_qp(v)
    return float(0.5 * np.sum(fe.p1_at_qp(rho_nodal) * np.sum(vq**2, axis=-1) * fe.wdx))


def interface_energy(mesh, phi, params) -> float:
    """``sigma * int(eps/2 |grad phi|^2 + W(phi)/eps)``."""
    fe = fe_data(mesh)
    g = fe.p1_grad(phi)
    grad2 = float(np.sum(fe.area * np.sum(g**2, axis=1)))
    w = float(np.sum(potential_W(fe.p1_at_qp(phi), params.s) * fe.wdx))
    return params.sigma * (0.5 * params.eps * grad2 + w / params.eps)


def discrete_energy(state: State, phi_prev, params: PhysParams, mesh: Mesh2D) -> float:
    """``int 1/2 rho(phi_prev)|v|^2 + sigma int(eps/2|grad phi|^2 + W(phi)/eps)``."""
    rho = interp_density(phi_prev, params.rho1, params.rho2)
    return _kinetic(mesh, rho, state.v) + interface_energy(mesh, state.phi, params)


@dataclass
class EnergyLedger:
    kinetic_new: float
    interface_new: float
    inertia_dissipation: float
    interface_dissipation: float
    viscous_dissipation: float
    diffusive_dissipation: float
    kinetic_old: float
    interface_old: float
    gravity_work: float

    @property
    def lhs(self) -> float:
        return (self.kinetic_new + self.interface_new + self.inertia_dissipation
                + self.interface_dissipation + self.viscous_dissipation
                + self.diffusive_dissipation)

    @property
    def rhs(self) -> float:
        return self.kinetic_old + self.interface_old + self.gravity_work

    @property
    def violation(self) -> float:
        """``lhs - rhs``; nonpositive when the inequality holds."""
        return self.lhs - self.rhs

    @property
    def energy(self) -> float:
        return self.kinetic_new + self.interface_new

    @property
    def dissipation(self) -> float:
        return (self.inertia_dissipation + self.interface_dissipation
                + self.viscous_dissipation + self.diffusive_dissipation)


def energy_budget(state: State, history: History, params: PhysParams,
                  mesh: Mesh2D) -> EnergyLedger:
    """Both sides of the discrete energy inequality for the step
    ``history -> state`` on a fixed mesh."""
    fe = fe_data(mesh)
    tau = params.tau
    rho_km1 = interp_density(history.phi_km1, params.rho1, params.rho2)
    rho_km2 = interp_density(history.phi_km2, params.rho1, params.rho2)
    eta_km1 = interp_viscosity(history.phi_km1, params.eta1, params.eta2)
    vq, gv = fe.p2vec_at_qp(state.v)
    sym = 0.5 * (gv + np.swapaxes(gv, 2, 3))
    visc = tau * float(np.sum(2.0 * fe.p1_at_qp(eta_km1) * np.sum(sym**2, axis=(2, 3))
                              * fe.wdx))
    gmu = fe.p1_grad(state.mu)
    diff = tau * params.b * float(np.sum(fe.area * np.sum(gmu**2, axis=1)))
    dphi = fe.p1_grad(state.phi - history.phi_km1)
    num_phi = 0.5 * params.sigma * params.eps * float(np.sum(fe.area * np.sum(dphi**2, axis=1)))
    grav = tau * float(np.sum(fe.p1_at_qp(rho_km1)
                              * (vq @ np.asarray(params.g)) * fe.wdx))
    return EnergyLedger(
        kinetic_new=_kinetic(mesh, rho_km1, state.v),
        interface_new=interface_energy(mesh, state.phi, params),
        inertia_dissipation=_kinetic(mesh, rho_km2, state.v - history.v_km1),
        interface_dissipation=num_phi,
        viscous_dissipation=visc,
        diffusive_dissipation=diff,
        kinetic_old=_kinetic(mesh, rho_km2, history.v_km1),
        interface_old=interface_energy(mesh, history.phi_km1, params),
        gravity_work=grav,
    )


def check_cfl(v, mesh: Mesh2D, tau: float) -> float:
    """``max_T tau * max_{P2 nodes of T} |v| / diam(T)``."""
    n = mesh.n_p2
    v = np.asarray(v, dtype=float)
    speed = np.hypot(v[:n], v[n:])
    return float(np.max(tau * speed[mesh.p2_triangles].max(axis=1) / mesh.diam))


def mass(mesh: Mesh2D, phi) -> float:
    """``int phi``."""
    fe = fe_data(mesh)
    return float(np.sum(fe.p1_at_qp(phi) * fe.wdx))
