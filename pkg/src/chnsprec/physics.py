"""Physical parameters, the Moreau-Yosida relaxed double-obstacle potential and
the phase-dependent material laws."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class PhysParams:
    """Material and discretisation scalars of the two-phase model.

    ``phi = -1`` is the phase with density ``rho1``/viscosity ``eta1``,
    ``phi = +1`` the phase with ``rho2``/``eta2``.
    """

    rho1: float
    rho2: float
    eta1: float
    eta2: float
    sigma: float
    eps: float
    tau: float
    b: float
    s: float
    g: tuple[float, float] = field(default=(0.0, -0.98))

    def __post_init__(self):
        for name in ("rho1", "rho2", "eta1", "eta2", "sigma", "eps", "tau", "b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.s < 0:
            raise ValueError(f"s must be nonnegative, got {self.s!r}")
        object.__setattr__(self, "g", (float(self.g[0]), float(self.g[1])))

    @property
    def Re(self) -> float:
        return 0.35 * self.rho1 / self.eta1

    def with_(self, **changes) -> "PhysParams":
        return replace(self, **changes)


# Rising bubble, first benchmark.
BENCHMARK1 = PhysParams(rho1=1000.0, rho2=100.0, eta1=10.0, eta2=1.0, sigma=15.6,
                        eps=0.04, tau=2e-3, b=4e-5, s=1e4)

# Rising bubble with topology change.
BENCHMARK2 = PhysParams(rho1=1000.0, rho2=1.0, eta1=10.0, eta2=0.1, sigma=1.24777,
                        eps=0.04, tau=2e-3, b=4e-5, s=1e6)


def potential_W(phi, s):
    phi = np.asarray(phi, dtype=float)
    plus = np.maximum(0.0, phi - 1.0) ** 2 + np.minimum(0.0, phi + 1.0) ** 2
    return 0.5 * (1.0 - phi**2) + 0.5 * s * plus


def potential_Wplus(phi, s):
    phi = np.asarray(phi, dtype=float)
    return 0.5 * s * (np.maximum(0.0, phi - 1.0) ** 2 + np.minimum(0.0, phi + 1.0) ** 2)


def potential_Wminus(phi):
    phi = np.asarray(phi, dtype=float)
    return 0.5 * (1.0 - phi**2)


def potential_Wprime_plus(phi, s):
    phi = np.asarray(phi, dtype=float)
    return s * (np.maximum(0.0, phi - 1.0) + np.minimum(0.0, phi + 1.0))


def potential_Wprime_minus(phi):
    return -np.asarray(phi, dtype=float)


def potential_Wsecond_plus(phi, s):
    """Newton derivative of ``W'_+``: ``s`` on the active set ``|phi| > 1``."""
    phi = np.asarray(phi, dtype=float)
    return np.where(np.abs(phi) > 1.0, float(s), 0.0)


def interp_density(phi, rho1, rho2):
    return 0.5 * (rho2 - rho1) * np.asarray(phi, dtype=float) + 0.5 * (rho2 + rho1)


def interp_viscosity(phi, eta1, eta2):
    # Same affine form as the density so that eta(-1) = eta1, eta(1) = eta2.
    return 0.5 * (eta2 - eta1) * np.asarray(phi, dtype=float) + 0.5 * (eta2 + eta1)
