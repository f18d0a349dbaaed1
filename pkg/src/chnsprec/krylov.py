"""Krylov solvers: restarted GMRES and flexible GMRES with right
preconditioning, Jacobi-preconditioned CG, and direct solves."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IndefiniteOperatorError, SingularMatrixError


class LinOp:
    """A square linear (or, if ``constant`` is False, iteration-dependent)
    operator given by its action."""

    def __init__(self, n: int, apply: Callable[[np.ndarray], np.ndarray],
                 constant: bool = True):
        self.n = int(n)
        self._apply = apply
        self.constant = constant

    @property
    def shape(self):
        return (self.n, self.n)

    def __call__(self, x):
        return self._apply(x)

    def __matmul__(self, x):
        return self._apply(x)


def as_apply(op) -> Callable[[np.ndarray], np.ndarray] | None:
    if op is None:
        return None
    if isinstance(op, LinOp):
        return op._apply
    if hasattr(op, "matvec"):
        return op.matvec
    if callable(op) and not hasattr(op, "shape"):
        return op
    return lambda x: op @ x


@dataclass
class KrylovConfig:
    """Stopping rule: ``rule='max'`` stops at ``max(tol_abs, tol_rel*|b|)``,
    ``rule='min'`` at ``min(tol_abs, tol_rel*|b|)``."""

    tol_rel: float = 1e-6
    tol_abs: float = 0.0
    restart: int = 30
    maxit: int = 500
    rule: str = "max"
    side: str = "right"

    def __post_init__(self):
        if self.restart < 1 or self.maxit < 1:
            raise ValueError("restart and maxit must be at least 1")
        if self.rule not in ("max", "min"):
            raise ValueError("rule must be 'max' or 'min'")
        if self.side != "right":
            raise ValueError("only right preconditioning is supported")

    def threshold(self, bnorm: float) -> float:
        f = max if self.rule == "max" else min
        return f(self.tol_abs, self.tol_rel * bnorm)


# outer solver settings: restart 30, |b - Az| <= min(1e-6 |b|, 1e-6)
OUTER_CONFIG = KrylovConfig(tol_rel=1e-6, tol_abs=1e-6, restart=30, maxit=600, rule="min")
# inner solver settings: no restart, relative tolerance 1e-1, at most 50 steps
INNER_CONFIG = KrylovConfig(tol_rel=1e-1, tol_abs=0.0, restart=50, maxit=50)
# baseline settings: GMRES restarted after 10 iterations
BASELINE_CONFIG = KrylovConfig(tol_rel=1e-6, tol_abs=1e-6, restart=10, maxit=2000, rule="min")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    inner: list = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]


def _givens(a, b):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def _gmres_core(op, rhs, precond, cfg, x0, flexible, callback=None):
    t0 = time.perf_counter()
    A = as_apply(op)
    M = as_apply(precond) or (lambda x: x)
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    bnorm = np.linalg.norm(b)
    report = SolveReport()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    report.residual_history.append(beta)
    thresh = cfg.threshold(bnorm)
    if beta <= thresh or beta == 0.0:
        report.converged = True
        report.wall_time = time.perf_counter() - t0
        return x, report

    m = cfg.restart
    while report.iterations < cfg.maxit:
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n)) if flexible else None
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        done = False
        for j in range(m):
            if report.iterations >= cfg.maxit:
                break
            z = M(V[j])
            if flexible:
                Z[j] = z
            w = A(z)
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = np.dot(w, V[i])
                w = w - H[i, j] * V[i]
            h = np.linalg.norm(w)
            H[j + 1, j] = h
            breakdown = h <= 1e-14 * max(np.abs(H[: j + 1, j]).max(), 1e-300)
            if not breakdown:
                V[j + 1] = w / h
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            report.iterations += 1
            report.residual_history.append(abs(g[j + 1]))
            if callback is not None:
                y = sla.solve_triangular(H[:k, :k], g[:k])
                xk = x + (Z[:k].T @ y if flexible else M(V[:k].T @ y))
                callback(xk)
            if abs(g[j + 1]) <= thresh or breakdown:
                done = True
                break
        if k == 0:
            break
        y = sla.solve_triangular(H[:k, :k], g[:k])
        if flexible:
            x = x + Z[:k].T @ y
        else:
            x = x + M(V[:k].T @ y)
        r = b - A(x)
        beta = np.linalg.norm(r)
        report.residual_history[-1] = beta
        if beta <= thresh:
            report.converged = True
            break
        if done and beta == 0.0:
            break
    report.wall_time = time.perf_counter() - t0
    return x, report


def gmres(op, rhs, precond=None, cfg: KrylovConfig | None = None, x0=None, callback=None):
    """Restarted right-preconditioned GMRES.

    The preconditioner must be a fixed linear operator; it is applied once
    more per cycle to map the Krylov correction back.  The last entry of the
    residual history is the true residual ``|b - A x|``.
    """
    return _gmres_core(op, rhs, precond, cfg or KrylovConfig(), x0, False, callback)


def fgmres(op, rhs, precond=None, cfg: KrylovConfig | None = None, x0=None, callback=None):
    """Flexible GMRES: the preconditioner may change from step to step
    (e.g. contain an inner iterative solve); preconditioned directions are
    stored explicitly."""
    return _gmres_core(op, rhs, precond, cfg or KrylovConfig(), x0, True, callback)


def pcg_jacobi(op, rhs, cfg: KrylovConfig | None = None, diag=None, x0=None):
    """Conjugate gradients with Jacobi preconditioning for SPD operators."""
    cfg = cfg or KrylovConfig(tol_rel=1e-8)
    t0 = time.perf_counter()
    A = as_apply(op)
    if diag is None:
        diag = op.diagonal()
    dinv = 1.0 / np.asarray(diag, dtype=float)
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A(x) if x0 is not None else b.copy()
    report = SolveReport(residual_history=[np.linalg.norm(r)])
    thresh = cfg.threshold(np.linalg.norm(b))
    if report.residual_history[0] <= thresh:
        report.converged = True
        return x, report
    z = dinv * r
    p = z.copy()
    rz = r @ z
    while report.iterations < cfg.maxit:
        Ap = A(p)
        curv = p @ Ap
        if curv <= 0:
            raise IndefiniteOperatorError(f"nonpositive curvature {curv:.3e} in CG")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        report.iterations += 1
        rn = np.linalg.norm(r)
        report.residual_history.append(rn)
        if rn <= thresh:
            report.converged = True
            break
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    report.wall_time = time.perf_counter() - t0
    return x, report


class DirectSolver:
    """LU factorisation of a sparse or dense matrix, reusable for many
    right-hand sides."""

    def __init__(self, matrix):
        self.shape = matrix.shape
        try:
            if sp.issparse(matrix):
                self._lu = spla.splu(sp.csc_matrix(matrix))
                self._solve = self._lu.solve
            else:
                with warnings.catch_warnings():
                    # exact singularity is reported below as an exception
                    warnings.simplefilter("ignore", sla.LinAlgWarning)
                    lu = sla.lu_factor(np.asarray(matrix, dtype=float), check_finite=False)
                if np.any(np.diag(lu[0]) == 0):
                    raise SingularMatrixError("matrix is exactly singular")
                self._solve = lambda b: sla.lu_solve(lu, b, check_finite=False)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc

    def __call__(self, b):
        return self._solve(np.asarray(b, dtype=float))

    solve = __call__


def direct_solve(matrix, rhs):
    return DirectSolver(matrix)(rhs)
