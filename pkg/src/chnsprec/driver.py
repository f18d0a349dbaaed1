"""Time stepping for the rising-bubble runs, scheme start-up and the
parameter-study presets."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_lambda, assemble_mass_p1, assemble_stiff_p1, fe_data, load_p1
from .errors import NonConvergenceError
from .krylov import DirectSolver, KrylovConfig
from .mesh import BENCHMARK_BC, build_dofmap, build_rect_mesh
from .model import (EnergyLedger, History, LinearSolverConfig, State, active_signature,
                    check_cfl, energy_budget, mass, semismooth_newton, step_at_roundoff)
from .physics import BENCHMARK1, BENCHMARK2, PhysParams, potential_Wprime_plus
from .precond import MODES, PrecondSettings

log = logging.getLogger(__name__)

BUBBLE_CENTER = (0.5, 0.5)
BUBBLE_RADIUS = 0.25


def initial_profile(mesh, eps: float, center=BUBBLE_CENTER, radius=BUBBLE_RADIUS):
    """``sin(clamp(d/eps, -pi/2, pi/2))`` with ``d`` the signed distance to the
    circle, positive inside (the bubble phase is ``phi = +1``)."""
    x, y = mesh.vertices.T
    d = radius - np.hypot(x - center[0], y - center[1])
    return np.sin(np.clip(d / eps, -0.5 * np.pi, 0.5 * np.pi))


def bubble_centroid(mesh, phi) -> np.ndarray:
    """Centre of mass of the ``phi = +1`` phase, weighted by ``(1+phi)/2``."""
    fe = fe_data(mesh)
    w = 0.5 * (1.0 + fe.p1_at_qp(phi)) * fe.wdx
    return np.array([np.sum(w * fe.qp[..., 0]), np.sum(w * fe.qp[..., 1])]) / np.sum(w)


def init_two_step(params: PhysParams, mesh, dof, phi_init=None, tol: float = 1e-9,
                  maxit: int = 25) -> History:
    """Solve the Cahn-Hilliard equations once with ``v = 0`` and
    ``phi^{-1} = phi_init`` to obtain ``(phi^0, mu^0)``."""
    phi_m1 = initial_profile(mesh, params.eps) if phi_init is None else np.asarray(phi_init, float)
    fe = fe_data(mesh)
    M1 = assemble_mass_p1(mesh)
    K1 = assemble_stiff_p1(mesh)
    sg, eps, tau, b = params.sigma, params.eps, params.tau, params.b
    n1 = dof.n1
    phi, mu = phi_m1.copy(), np.zeros(n1)

    def residual(phi, mu):
        f3 = M1 @ (phi - phi_m1) / tau + b * (K1 @ mu)
        wp = load_p1(mesh, potential_Wprime_plus(fe.p1_at_qp(phi), params.s))
        f4 = sg * eps * (K1 @ phi) + sg / eps * (wp - M1 @ phi_m1) - M1 @ mu
        return f3, f4

    f3, f4 = residual(phi, mu)
    res = [float(np.hypot(np.linalg.norm(f3), np.linalg.norm(f4)))]
    thresh = max(tol, tol * res[0])
    active = active_signature(phi)
    while res[-1] > thresh:
        if len(res) > maxit:
            raise NonConvergenceError("start-up Cahn-Hilliard solve did not converge",
                                      history=res, partial=(phi, mu))
        G = sg * eps * K1 + sg / eps * assemble_lambda(mesh, phi, params.s)
        J = sp.bmat([[M1, -G], [tau * b * K1, M1]], format="csc")
        z = DirectSolver(J)(np.concatenate([-f4, tau * f3]))
        mu, phi = mu - z[:n1], phi - z[n1:]
        f3, f4 = residual(phi, mu)
        res.append(float(np.hypot(np.linalg.norm(f3), np.linalg.norm(f4))))
        prev, active = active, active_signature(phi)
        if step_at_roundoff(z, np.concatenate([mu, phi]), prev, active):
            break
    log.info("start-up solve: %d Newton steps", len(res) - 1)
    return History(phi_km2=phi_m1.copy(), phi_km1=phi, mu_km1=mu, v_km1=np.zeros(dof.n2))


# configuration and statistics -------------------------------------------------

@dataclass
class RunConfig:
    nx: int = 16
    ny: int = 32
    width: float = 1.0
    height: float = 2.0
    params: PhysParams = BENCHMARK1
    n_steps: int = 20
    solver: str = "krylov"                    # 'krylov' or 'direct'
    mode: str = "block-triangular"            # outer preconditioner for 'krylov'
    settings: PrecondSettings = field(default_factory=PrecondSettings)
    newton_tol: float = 1e-9
    newton_maxit: int = 25
    lumped_lambda: bool = False
    bc: dict = field(default_factory=lambda: dict(BENCHMARK_BC))
    output_dir: str | None = None
    vtk_every: int = 0
    name: str = "run"

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.n_steps < 0:
            raise ValueError("mesh resolution must be positive and n_steps nonnegative")
        if self.solver not in ("krylov", "direct"):
            raise ValueError(f"solver must be 'krylov' or 'direct', got {self.solver!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown preconditioner mode {self.mode!r}")

    def linear_solver(self) -> LinearSolverConfig:
        return LinearSolverConfig(self.solver, self.mode, self.settings)


@dataclass
class StepRecord:
    step: int
    time: float
    newton_iters: int
    mean_fgmres: float
    energy: float
    dissipation: float
    cfl_max: float
    mass: float
    ledger: EnergyLedger
    krylov_iterations: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)


@dataclass
class RunStats:
    records: list = field(default_factory=list)
    initial_energy: float = 0.0
    initial_mass: float = 0.0

    def append(self, rec: StepRecord):
        self.records.append(rec)

    @property
    def newton_counts(self) -> list:
        return [r.newton_iters for r in self.records]

    @property
    def max_newton(self) -> int:
        return max(self.newton_counts, default=0)

    @property
    def avg_newton(self) -> float:
        return float(np.mean(self.newton_counts)) if self.records else 0.0

    def mean_fgmres(self, skip: int = 0) -> float:
        """Mean FGMRES iterations per Newton step over steps after ``skip``."""
        its = [k for r in self.records[skip:] for k in r.krylov_iterations]
        return float(np.mean(its)) if its else 0.0

    def rows(self):
        return [(r.step, r.time, r.newton_iters, r.mean_fgmres, r.energy, r.dissipation,
                 r.cfl_max) for r in self.records]


def advance(history: History, params: PhysParams, mesh, dof, solver: LinearSolverConfig,
            step: int = 1, newton_tol: float = 1e-9, newton_maxit: int = 25,
            lumped_lambda: bool = False):
    """One time step: returns ``(state, record, shifted history)``."""
    state, rep = semismooth_newton(history, params, mesh, dof, solver, tol_abs=newton_tol,
                                   tol_rel=newton_tol, maxit=newton_maxit,
                                   lumped_lambda=lumped_lambda)
    ledger = energy_budget(state, history, params, mesh)
    cfl = check_cfl(state.v, mesh, params.tau)
    if cfl > 1.0:
        log.warning("step %d: CFL number %.3f exceeds 1", step, cfl)
    rec = StepRecord(step=step, time=step * params.tau, newton_iters=rep.iterations,
                     mean_fgmres=rep.mean_krylov, energy=ledger.energy,
                     dissipation=ledger.dissipation, cfl_max=cfl,
                     mass=mass(mesh, state.phi), ledger=ledger,
                     krylov_iterations=list(rep.krylov_iterations),
                     residual_norms=list(rep.residual_norms))
    return state, rec, history.shift(state)


def run(config: RunConfig, history: History | None = None, callback=None):
    """Run ``config.n_steps`` steps; returns ``(stats, state, history)``.

    On nonconvergence the statistics gathered so far are written (if an
    output directory is set) and the error is re-raised with them attached.
    """
    from . import iohub

    mesh = build_rect_mesh(config.width, config.height, config.nx, config.ny)
    dof = build_dofmap(mesh, config.bc)
    params = config.params
    if history is None:
        history = init_two_step(params, mesh, dof)
    state = State(v=history.v_km1.copy(), p=np.zeros(dof.n1), phi=history.phi_km1.copy(),
                  mu=history.mu_km1.copy())
    stats = RunStats(initial_energy=energy_budget(state, history, params, mesh).interface_old,
                     initial_mass=mass(mesh, history.phi_km1))
    out = Path(config.output_dir) if config.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    solver = config.linear_solver()
    try:
        for k in range(1, config.n_steps + 1):
            state, rec, history = advance(history, params, mesh, dof, solver, step=k,
                                          newton_tol=config.newton_tol,
                                          newton_maxit=config.newton_maxit,
                                          lumped_lambda=config.lumped_lambda)
            stats.append(rec)
            log.info("step %d: newton %d, mean fgmres %.1f, energy %.6g", k,
                     rec.newton_iters, rec.mean_fgmres, rec.energy)
            if out is not None and config.vtk_every and k % config.vtk_every == 0:
                iohub.write_vtk(iohub.FieldSnapshot.from_state(rec.time, mesh, state),
                                out / f"{config.name}_{k:05d}.vtk")
            if callback is not None:
                callback(k, state, rec)
    except NonConvergenceError as exc:
        exc.partial = stats
        if out is not None:
            iohub.write_csv(stats, out / f"{config.name}.csv")
        raise
    if out is not None:
        iohub.write_csv(stats, out / f"{config.name}.csv")
    return stats, state, history


# studies ----------------------------------------------------------------------

def vary_all_params(nx: int, base: PhysParams = BENCHMARK1) -> PhysParams:
    """Couple eps to the mesh (four cells across the interface width pi*eps),
    with ``tau ~ eps^2`` and ``b = 1e-3 eps``."""
    eps = 4.0 / (math.pi * nx)
    return base.with_(eps=eps, tau=2e-3 * (eps / 0.04) ** 2, b=1e-3 * eps)


STUDIES = {
    "vary-all": [(16, 32), (24, 48), (32, 64)],
    "vary-sigma": [0.02, 0.1, 1.0, 10.0, 90.0],
    "vary-Re": [1000.0, 2000.0, 4000.0, 8000.0, 16000.0],
    "vary-mobility": [7e-5, 4e-5, 1e-4, 3e-4],
    "vary-penalty": [1e4, 1e6, 1e8, 1e9],
    "benchmark-2-topology": [None],
}


def study_configs(preset: str, base: RunConfig | None = None, values=None):
    """``[(label, RunConfig)]`` for a study preset."""
    if preset not in STUDIES:
        raise ValueError(f"unknown study {preset!r}; choose from {sorted(STUDIES)}")
    base = base or RunConfig(nx=32, ny=64)
    values = STUDIES[preset] if values is None else list(values)
    p6 = base.params.with_(s=1e6)
    out = []
    for val in values:
        if preset == "vary-all":
            nx, ny = val
            cfg = replace(base, nx=nx, ny=ny, params=vary_all_params(nx, base.params))
            label = f"{nx}x{ny}"
        elif preset == "vary-sigma":
            cfg, label = replace(base, params=p6.with_(sigma=val)), f"sigma={val:g}"
        elif preset == "vary-Re":
            cfg, label = replace(base, params=p6.with_(rho1=val)), f"rho1={val:g}"
        elif preset == "vary-mobility":
            cfg, label = replace(base, params=p6.with_(b=val)), f"b={val:g}"
        elif preset == "vary-penalty":
            cfg, label = replace(base, params=base.params.with_(s=val)), f"s={val:g}"
        else:
            settings = replace(base.settings,
                               s1=replace(base.settings.s1, tol=1e-6),
                               s2=replace(base.settings.s2, tol=1e-6),
                               inner=KrylovConfig(tol_rel=1e-2, restart=50, maxit=50))
            cfg, label = replace(base, params=BENCHMARK2, settings=settings), "benchmark-2"
        if any(v is not None and not (np.all(np.asarray(v, dtype=float) > 0)) for v in [val]):
            raise ValueError(f"sweep values must be positive, got {val!r}")
        out.append((label, replace(cfg, name=f"{preset}_{label}".replace("=", "_"))))
    return out


@dataclass
class StudyResult:
    preset: str
    runs: dict = field(default_factory=dict)      # label -> RunStats
    failures: dict = field(default_factory=dict)  # label -> message

    def table(self):
        """``[(label, max Newton, avg Newton, mean FGMRES)]``."""
        return [(lab, st.max_newton, st.avg_newton, st.mean_fgmres())
                for lab, st in self.runs.items()]


def run_study(preset: str, base: RunConfig | None = None, values=None) -> StudyResult:
    """Run every member of a study; nonconverged members are recorded with
    their partial statistics rather than aborting the sweep."""
    result = StudyResult(preset)
    for label, cfg in study_configs(preset, base, values):
        try:
            stats, _, _ = run(cfg)
        except NonConvergenceError as exc:
            result.failures[label] = str(exc)
            stats = exc.partial if isinstance(exc.partial, RunStats) else RunStats()
        result.runs[label] = stats
    if base is not None and base.output_dir:
        from . import iohub
        iohub.write_study_summary(result, Path(base.output_dir) / f"{preset}_summary.csv")
    return result


PRESETS = {"benchmark-1": BENCHMARK1, "benchmark-2": BENCHMARK2}
