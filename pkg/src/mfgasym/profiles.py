"""Closed-form self-similar solutions and their scaling constants.

The density profile is

    M_a(eta) = (R_a - alpha (1 - alpha) eta^2 / 2)_+^(1/theta),   alpha = 2 / (2 + theta),

and the self-similar pair is m = t^-alpha M_a(x t^-alpha),
u = t^(2 alpha - 1) U_a(x t^-alpha) + z(t) with U_a(eta) = -(alpha/2) eta^2.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class Variant(str, enum.Enum):
    TERMINAL_COST = "terminal_cost"
    PLANNING = "planning"
    INFINITE_HORIZON = "infinite_horizon"


def alpha_of(theta: float) -> float:
    return 2.0 / (2.0 + theta)


@dataclass(frozen=True)
class Params:
    """Problem parameters. ``alpha`` is derived from ``theta`` and never stored."""

    theta: float
    mass: float = 1.0
    horizon: float = 1.0
    kappa_T: float = 1.0
    variant: Variant = Variant.TERMINAL_COST
    C0: float = 1e3

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        for name in ("theta", "mass", "horizon", "kappa_T", "C0"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise DomainError(f"{name} must be positive and finite, got {val!r}")
        if not (1.0 / self.C0 <= self.kappa_T <= self.C0):
            raise DomainError(
                f"kappa_T={self.kappa_T!r} outside [1/C0, C0] with C0={self.C0!r}"
            )

    @property
    def alpha(self) -> float:
        return alpha_of(self.theta)

    @property
    def self_similar_kappa(self) -> float:
        """The kappa_T for which the self-similar pair meets the terminal condition."""
        return 1.0 / (1.0 - self.alpha)


def _support_mass(R: float, theta: float) -> float:
    # integral of (R - c eta^2)_+^(1/theta) over its support [-h, h];
    # QAWS handles the (1/theta)-power behaviour at both endpoints
    alpha = alpha_of(theta)
    c = alpha * (1.0 - alpha) / 2.0
    h = np.sqrt(R / c)
    # (R - c eta^2) = c (h - eta)(h + eta)
    val, _ = integrate.quad(
        lambda _eta: c ** (1.0 / theta),
        -h,
        h,
        weight="alg",
        wvar=(1.0 / theta, 1.0 / theta),
        epsabs=0.0,
        epsrel=1e-13,
    )
    return val


def compute_R_a(mass: float, theta: float) -> float:
    """Height constant R_a of the stationary profile carrying ``mass``."""
    if not (np.isfinite(mass) and mass > 0):
        raise DomainError(f"mass must be positive, got {mass!r}")
    if not (np.isfinite(theta) and theta > 0):
        raise DomainError(f"theta must be positive, got {theta!r}")
    lo = np.finfo(float).eps
    hi = 1.0
    while _support_mass(hi, theta) < mass:
        lo, hi = hi, 2.0 * hi
    while _support_mass(lo, theta) > mass:
        lo *= 0.5
    return optimize.bisect(
        lambda R: _support_mass(R, theta) - mass,
        lo,
        hi,
        xtol=1e-300,
        rtol=4 * np.finfo(float).eps,
        maxiter=2000,
    )


@dataclass(frozen=True)
class SelfSimilarProfile:
    R_a: float
    theta: float
    mass: float
    z_ref: float = 0.0
    alpha: float = field(init=False)
    support_half_width: float = field(init=False)

    def __post_init__(self):
        a = alpha_of(self.theta)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(
            self, "support_half_width", float(np.sqrt(2.0 * self.R_a / (a * (1.0 - a))))
        )

    def z(self, t):
        """Time-dependent constant of the value function, with z(1) = z_ref."""
        t = np.asarray(t, dtype=float)
        R, a = self.R_a, self.alpha
        if self.theta == 2.0:
            return self.z_ref - R * np.log(t)
        k = 2.0 * a - 1.0
        return self.z_ref - R * (t**k - 1.0) / k

    def edge(self, t):
        """Right edge of the support of the density at time t."""
        return self.support_half_width * np.asarray(t, dtype=float) ** self.alpha

    def terminal_shift(self, T: float) -> float:
        """Constant added to u so that u(., T) = c_T m^theta(., T) with kappa_T = 1/(1 - alpha)."""
        kappa = 1.0 / (1.0 - self.alpha)
        return kappa * T ** (2.0 * self.alpha - 1.0) * self.R_a - float(self.z(T))


def make_profile(mass: float, theta: float) -> SelfSimilarProfile:
    return SelfSimilarProfile(R_a=compute_R_a(mass, theta), theta=theta, mass=mass)


def eval_stationary_profile(eta, profile: SelfSimilarProfile):
    """Return (M, U) at ``eta``; U is NaN outside the support where it is undefined."""
    eta = np.asarray(eta, dtype=float)
    a = profile.alpha
    base = profile.R_a - a * (1.0 - a) * eta**2 / 2.0
    M = np.maximum(base, 0.0) ** (1.0 / profile.theta)
    inside = np.abs(eta) < profile.support_half_width
    U = np.where(inside, -0.5 * a * eta**2, np.nan)
    return M, U


def eval_self_similar(x, t, profile: SelfSimilarProfile, extend: bool = False):
    """Return (m, u, u_x) of the self-similar pair.

    u and u_x are NaN outside the support unless ``extend`` is set, in which
    case the interior formulas are continued analytically.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("self-similar solution needs t > 0")
    x = np.asarray(x, dtype=float)
    a = profile.alpha
    eta = x * t ** (-a)
    M, _ = eval_stationary_profile(eta, profile)
    m = t ** (-a) * M
    u = t ** (2.0 * a - 1.0) * (-0.5 * a * eta**2) + profile.z(t)
    ux = -a * x / t
    if not extend:
        outside = np.abs(eta) >= profile.support_half_width
        u = np.where(outside, np.nan, u)
        ux = np.where(outside, np.nan, ux)
    return m, u, ux


def quadratic_power_cell_averages(edges, a0: float, b0: float, c: float, theta: float):
    """Cell averages of (c (x - a0)(b0 - x))_+^(1/theta) between consecutive ``edges``.

    Uses the antiderivative in terms of the regularized incomplete Beta
    function, so the averages carry the exact integral of the shape.
    """
    edges = np.asarray(edges, dtype=float)
    p = 1.0 + 1.0 / theta
    s = np.clip((edges - a0) / (b0 - a0), 0.0, 1.0)
    scale = c ** (1.0 / theta) * (b0 - a0) ** (2.0 / theta + 1.0) * special.beta(p, p)
    cum = scale * special.betainc(p, p, s)
    return np.diff(cum) / np.diff(edges)


def self_similar_cell_averages(edges, t: float, profile: SelfSimilarProfile, center: float = 0.0):
    """Cell averages of the self-similar density at time t."""
    if t <= 0:
        raise DomainError("self-similar solution needs t > 0")
    a = profile.alpha
    h = profile.support_half_width * t**a
    # t^-a (R - c eta^2)^(1/theta) = (c' (h - y)(h + y))^(1/theta) with y = x - center
    c = a * (1.0 - a) / 2.0
    coef = t ** (-a * profile.theta) * c * t ** (-2.0 * a)
    return quadratic_power_cell_averages(edges, center - h, center + h, coef, profile.theta)
