"""Spectral check of the Cahn-Hilliard block against its penalty-free part.

With ``M = M1``, ``K = tau*b*K1``, ``alpha = sigma*eps/(tau*b)`` and
``beta = sigma/eps``,

    X = [M  -alpha*K]        Y = [M  -alpha*K - beta*Lambda]
        [K   M      ]            [K   M                    ]

Every eigenvalue of ``X^{-1} Y`` lies in the disc around one of radius
``beta/(2 sqrt(alpha)) * rho(Lambda~)``, ``Lambda~ = M^{-1/2} Lambda M^{-1/2}``.

``X - Y`` only has the block ``beta*Lambda`` in its upper right corner, so
``X^{-1}(X - Y)`` has a zero first block column and its eigenvalues are
zero together with those of ``beta * (X^{-1})_{21} * Lambda``.  Restricting
further to the columns where ``Lambda`` is nonzero gives an exact and much
smaller dense eigenproblem; ``method='full'`` solves the ``2n x 2n`` problem
instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import assemble_lambda, assemble_mass_p1, assemble_stiff_p1


def _dense(a):
    return a.toarray() if hasattr(a, "toarray") else np.asarray(a, dtype=float)


def cahn_hilliard_alpha_beta(params):
    return params.sigma * params.eps / (params.tau * params.b), params.sigma / params.eps


def build_XY(M, K, Lam, alpha: float, beta: float):
    """Dense ``(X, Y)``; ``K`` is the scaled stiffness ``tau*b*K1``."""
    M, K, Lam = _dense(M), _dense(K), _dense(Lam)
    if not (M.shape == K.shape == Lam.shape):
        raise ValueError("M, K and Lambda must have the same shape")
    X = np.block([[M, -alpha * K], [K, M]])
    Y = np.block([[M, -alpha * K - beta * Lam], [K, M]])
    return X, Y


def _sym_inv_sqrt(M):
    if np.count_nonzero(M - np.diag(np.diag(M))) == 0:
        return np.diag(1.0 / np.sqrt(np.diag(M)))
    w, V = np.linalg.eigh(M)
    return (V / np.sqrt(w)) @ V.T


@dataclass
class SpectralReport:
    alpha: float
    beta: float
    eigenvalues: np.ndarray            # of X^{-1}(X - Y), nonzero part
    measured_radius: float
    bound_radius: float
    rho_lambda: float
    rho_lambda0: float | None = None
    lumped: bool = False
    method: str = "reduced"
    n_zero: int = 0                    # eigenvalues that are structurally zero

    @property
    def margin(self) -> float:
        return self.bound_radius - self.measured_radius

    def contained(self, slack: float = 1e-10) -> bool:
        return self.measured_radius <= self.bound_radius + slack


class SpectralProblem:
    """Fixed ``(M, K, alpha, beta)``; factorisations are reused over many
    penalty matrices."""

    def __init__(self, M, K, alpha: float, beta: float, lumped: bool = False):
        self.M = _dense(M)
        self.K = _dense(K)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.lumped = lumped
        self.n = self.M.shape[0]
        self._Z = None
        self._Mih = None

    @classmethod
    def from_mesh(cls, mesh, params, lumped: bool = True) -> "SpectralProblem":
        M = assemble_mass_p1(mesh, lumped=lumped)
        K = params.tau * params.b * assemble_stiff_p1(mesh)
        alpha, beta = cahn_hilliard_alpha_beta(params)
        return cls(M, K, alpha, beta, lumped)

    @property
    def M_inv_half(self):
        if self._Mih is None:
            self._Mih = _sym_inv_sqrt(self.M)
        return self._Mih

    @property
    def Z(self):
        """``(WM)^{-1} C = (M + alpha K M^{-1} K)^{-1} K M^{-1}``."""
        if self._Z is None:
            M, K = self.M, self.K
            lu = sla.lu_factor(M)
            MinvK = sla.lu_solve(lu, K)                  # M^{-1} K
            C = sla.lu_solve(lu, K.T).T                  # K M^{-1}
            WM = M + self.alpha * K @ MinvK
            self._Z = np.linalg.solve(WM, C)
        return self._Z

    def XY(self, Lam):
        return build_XY(self.M, self.K, Lam, self.alpha, self.beta)

    def rho_lambda(self, Lam) -> float:
        Lt = self.M_inv_half @ _dense(Lam) @ self.M_inv_half
        return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (Lt + Lt.T)))))

    def bound(self, Lam) -> float:
        return self.beta / (2.0 * np.sqrt(self.alpha)) * self.rho_lambda(Lam)

    def eigs_reduced(self, Lam):
        """Nonzero eigenvalues of ``X^{-1}(X-Y)`` and the number of zeros."""
        Lam = _dense(Lam)
        J = np.flatnonzero(np.any(Lam != 0.0, axis=0))
        if J.size == 0:
            return np.zeros(0, dtype=complex), 2 * self.n
        # (X^{-1})_{21} = -(WM)^{-1} C
        block = -self.beta * self.Z[J] @ Lam[:, J]
        return np.linalg.eigvals(block).astype(complex), 2 * self.n - J.size

    def eigs_full(self, Lam):
        X, _ = self.XY(Lam)
        # X - Y has beta*Lambda as its only nonzero block; forming it by
        # subtraction would cancel against alpha*K
        D = np.zeros_like(X)
        D[:self.n, self.n:] = self.beta * _dense(Lam)
        lam = sla.eigvals(np.linalg.solve(X, D))
        return lam

    def report(self, Lam, method: str = "reduced", rho_lambda0: float | None = None):
        if method == "reduced":
            ev, nz = self.eigs_reduced(Lam)
        elif method == "full":
            ev, nz = self.eigs_full(Lam), 0
        else:
            raise ValueError("method must be 'reduced' or 'full'")
        rho = self.rho_lambda(Lam)
        radius = float(np.max(np.abs(ev))) if ev.size else 0.0
        return SpectralReport(alpha=self.alpha, beta=self.beta, eigenvalues=ev,
                              measured_radius=radius,
                              bound_radius=self.beta / (2 * np.sqrt(self.alpha)) * rho,
                              rho_lambda=rho, rho_lambda0=rho_lambda0, lumped=self.lumped,
                              method=method, n_zero=nz)

    # proof intermediates --------------------------------------------------

    def factored_radius(self, Lam) -> float:
        """``beta * rho((WM)^{-1} C Lambda)``."""
        return self.beta * float(np.max(np.abs(np.linalg.eigvals(self.Z @ _dense(Lam)))))

    def C_tilde(self):
        Mih = self.M_inv_half
        Ct = Mih @ self.K @ Mih
        return 0.5 * (Ct + Ct.T)

    def r_of_C_tilde(self):
        """``r(C~) = C~ (I + alpha C~^2)^{-1}`` via the eigendecomposition."""
        w, V = np.linalg.eigh(self.C_tilde())
        return (V * rational(w, self.alpha)) @ V.T

    def similar_eigs(self, Lam):
        """Eigenvalues of ``(WM)^{-1} C Lambda`` and of ``r(C~) Lambda~``."""
        Lam = _dense(Lam)
        Lt = self.M_inv_half @ Lam @ self.M_inv_half
        a = np.linalg.eigvals(self.Z @ Lam)
        b = np.linalg.eigvals(self.r_of_C_tilde() @ Lt)
        return a, b


def verify_inclusion(X, Y, M, Lam, alpha: float, beta: float) -> SpectralReport:
    """Dense check on given ``X, Y``: eigenvalues of ``X^{-1}(X - Y)``."""
    X, Y, M = _dense(X), _dense(Y), _dense(M)
    ev = sla.eigvals(np.linalg.solve(X, X - Y))
    Mih = _sym_inv_sqrt(M)
    Lt = Mih @ _dense(Lam) @ Mih
    rho = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (Lt + Lt.T)))))
    return SpectralReport(alpha=alpha, beta=beta, eigenvalues=ev,
                          measured_radius=float(np.max(np.abs(ev))),
                          bound_radius=beta / (2 * np.sqrt(alpha)) * rho,
                          rho_lambda=rho, method="full")


def rational(x, alpha: float):
    """``r(x) = x / (1 + alpha x^2)``; maximal value ``1/(2 sqrt(alpha))`` at
    ``x = 1/sqrt(alpha)``."""
    x = np.asarray(x, dtype=float)
    return x / (1.0 + alpha * x * x)


@dataclass
class RationalBoundReport:
    max_r: float
    bound: float
    argmax: float
    distance_to_peak: float       # min |lambda - 1/sqrt(alpha)|


def rational_bound_check(K_tilde, alpha: float) -> RationalBoundReport:
    w = np.linalg.eigvalsh(0.5 * (_dense(K_tilde) + _dense(K_tilde).T))
    r = rational(w, alpha)
    i = int(np.argmax(r))
    return RationalBoundReport(max_r=float(r[i]), bound=1.0 / (2.0 * np.sqrt(alpha)),
                               argmax=float(w[i]),
                               distance_to_peak=float(np.min(np.abs(w - 1 / np.sqrt(alpha)))))


def tau_threshold(params, rho_lambda0: float = 1.0) -> float:
    """Largest step with radius at most 1/2: ``eps^3/(s^2 sigma b rho0^2)``."""
    if params.s == 0:
        return np.inf
    return params.eps**3 / (params.s**2 * params.sigma * params.b * rho_lambda0**2)


def corollary_radius(params) -> float:
    """``s sqrt(tau sigma b) / (2 eps^{3/2})`` (lumped mass, rho(Lambda~_0) = 1)."""
    return params.s * np.sqrt(params.tau * params.sigma * params.b) / (2 * params.eps**1.5)


def random_active_phi(n: int, fraction: float, rng: np.random.Generator):
    """Synthetic phase field with roughly ``fraction`` of nodes in ``|phi| > 1``."""
    phi = rng.uniform(-0.99, 0.99, n)
    active = rng.random(n) < fraction
    if not active.any():
        active[rng.integers(n)] = True
    phi[active] = rng.choice([-1.0, 1.0], active.sum()) * rng.uniform(1.01, 1.5, active.sum())
    return phi


def random_lambda(mesh, s: float, rng, fraction=None, lumped: bool = True):
    frac = rng.uniform(0.02, 0.5) if fraction is None else fraction
    phi = random_active_phi(mesh.n_vertices, frac, rng)
    return assemble_lambda(mesh, phi, s, lumped=lumped), phi


@dataclass
class SpectralSweep:
    reports: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def rows(self):
        return [(lab, r.alpha, r.beta, r.rho_lambda, r.measured_radius, r.bound_radius,
                 r.margin) for lab, r in zip(self.labels, self.reports)]


SPECTRAL_CSV_HEADER = ("sample", "alpha", "beta", "rho_lambda", "measured_radius",
                       "bound", "margin")


def write_csv(sweep: SpectralSweep, path):
    from .iohub import write_rows
    write_rows(path, SPECTRAL_CSV_HEADER, sweep.rows())


def sweep(mesh, param_list, n_samples: int, seed: int = 0, lumped: bool = True,
          method: str = "reduced") -> SpectralSweep:
    """Random active sets for each parameter tuple."""
    rng = np.random.default_rng(seed)
    out = SpectralSweep()
    for j, params in enumerate(param_list):
        prob = SpectralProblem.from_mesh(mesh, params, lumped=lumped)
        for i in range(n_samples):
            Lam, _ = random_lambda(mesh, params.s, rng, lumped=lumped)
            rep = prob.report(Lam, method=method,
                              rho_lambda0=prob.rho_lambda(Lam) / params.s if params.s else 0.0)
            out.reports.append(rep)
            out.labels.append(f"p{j}-s{i}")
    return out
