"""Continuous rescaling, the Lyapunov functional and convergence metrics.

With t = e^tau and x = t^alpha eta,

    mu(eta, tau) = t^alpha m(x, t),   v(eta, tau) = t^(1 - 2 alpha) u(x, t),
    w = v + (alpha / 2) eta^2,

the self-similar pair becomes the stationary state (w_eta = 0, mu = M_a).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate

from mfgasym.profiles import (
    DomainError,
    Params,
    SelfSimilarProfile,
    Variant,
    eval_self_similar,
    eval_stationary_profile,
    self_similar_cell_averages,
)
from mfgasym.solver import Field

MU_FLOOR = 1e-8
MIN_R_SQUARED = 0.98


@dataclass(frozen=True, eq=False)
class RescaledState:
    eta_grid: np.ndarray
    tau_samples: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    w: np.ndarray
    theta: float
    mass: float
    w_eta: np.ndarray | None = None

    @property
    def alpha(self) -> float:
        return 2.0 / (2.0 + self.theta)


@dataclass(frozen=True, eq=False)
class LyapunovTrace:
    tau: np.ndarray
    E: np.ndarray
    dE_numeric: np.ndarray
    dE_formula: np.ndarray
    theta: float
    kinetic: np.ndarray | None = None
    f_critical: np.ndarray | None = None


def _trapz(y, x):
    return integrate.trapezoid(y, x, axis=-1)


def value_offset(u: Field, params: Params) -> float:
    """Constant removed from u before rescaling: u(0, 1) for theta <= 2 with a
    terminal cost, nothing otherwise.  Outside the window the nearest end is used."""
    if params.variant == Variant.PLANNING or params.theta > 2:
        return 0.0
    g = u.grid
    t = min(max(1.0, g.t0), g.t1)
    return float(np.interp(0.0, g.x, u.at(t)))


def rescale(u: Field, m: Field, params: Params, tau_samples, eta_grid,
            offset: float | None = None) -> RescaledState:
    """Sample (mu, v, w) on ``eta_grid`` at each tau by linear interpolation in x and t."""
    tau = np.atleast_1d(np.asarray(tau_samples, dtype=float))
    eta = np.asarray(eta_grid, dtype=float)
    g = m.grid
    lo, hi = np.log(g.t0) if g.t0 > 0 else -np.inf, np.log(g.t1)
    bad = (tau < lo - 1e-12) | (tau > hi + 1e-12)
    if np.any(bad):
        raise DomainError(f"tau {tau[bad][0]!r} outside the run window [{lo}, {hi}]")
    a = params.alpha
    if offset is None:
        offset = value_offset(u, params)
    eta_edges = _edges_of(eta)
    mu = np.empty((len(tau), len(eta)))
    v = np.empty_like(mu)
    we = np.empty_like(mu)
    for k, tk in enumerate(tau):
        t = float(np.clip(np.exp(tk), g.t0, g.t1))
        x = t**a * eta
        ut = u.at(t)
        mu[k] = _remap_density(m.at(t), g, t**a * eta_edges) * t**a
        v[k] = t ** (1.0 - 2.0 * a) * (np.interp(x, g.x, ut) - offset)
        # w_eta = t^(1 - alpha) u_x + alpha eta, with u_x differenced on the run grid
        we[k] = t ** (1.0 - a) * np.interp(x, g.x, np.gradient(ut, g.dx)) + a * eta
    w = v + 0.5 * a * eta**2
    for arr in (mu, v, w, we):
        arr.flags.writeable = False
    mass = float(np.sum(m.values[0]) * g.dx)
    return RescaledState(eta, tau, mu, v, w, float(params.theta), mass, we)


def _edges_of(centres):
    mid = 0.5 * (centres[1:] + centres[:-1])
    return np.concatenate([[2 * centres[0] - mid[0]], mid, [2 * centres[-1] - mid[-1]]])


def _remap_density(m_row, grid, x_edges):
    # averages over [x_edges[i], x_edges[i+1]] from a monotone interpolant of
    # the cumulative mass, which conserves mass and keeps the sign
    cum = np.concatenate([[0.0], np.cumsum(m_row) * grid.dx])
    C = interpolate.PchipInterpolator(grid.edges, cum)(np.clip(x_edges, grid.edges[0], grid.edges[-1]))
    return np.diff(C) / np.diff(x_edges)


def _check_match(state: RescaledState, profile: SelfSimilarProfile):
    if state.theta != profile.theta:
        raise DomainError(f"theta mismatch: state {state.theta!r}, profile {profile.theta!r}")
    if abs(state.mass - profile.mass) > 1e-6 * profile.mass:
        raise DomainError(f"mass mismatch: state {state.mass!r}, profile {profile.mass!r}")


def _w_eta(state: RescaledState, mu_floor: float):
    we = state.w_eta
    if we is None:
        we = np.gradient(state.w, state.eta_grid, axis=1)
    return np.where(state.mu > mu_floor, we, 0.0)


def entropy_gap(mu, eta, profile: SelfSimilarProfile):
    """Pointwise F(mu) - F(M_a) - (R_a - alpha (1 - alpha) eta^2 / 2)(mu - M_a)."""
    th, a = profile.theta, profile.alpha
    M, _ = eval_stationary_profile(eta, profile)
    base = profile.R_a - 0.5 * a * (1.0 - a) * eta**2
    F = lambda s: s ** (th + 1.0) / (th + 1.0)  # noqa: E731
    return F(mu) - F(M) - base * (mu - M)


def lyapunov(state: RescaledState, profile: SelfSimilarProfile,
             mu_floor: float = MU_FLOOR) -> LyapunovTrace:
    """E(tau), its centred tau-derivative and the right side of the derivative identity."""
    _check_match(state, profile)
    eta = state.eta_grid
    we = _w_eta(state, mu_floor)
    kinetic = _trapz(state.mu * we**2, eta)
    gap = _trapz(entropy_gap(state.mu, eta, profile), eta)
    E = 0.5 * kinetic - gap
    tau = state.tau_samples
    dE = np.gradient(E, tau) if len(tau) > 1 else np.zeros_like(E)
    th = state.theta
    dE_formula = (th - 2.0) / (th + 2.0) * kinetic
    f = critical_functional(state, profile, mu_floor)[0] if th == 2.0 else None
    return LyapunovTrace(tau, E, dE, dE_formula, th, kinetic, f)


def critical_functional(state: RescaledState, profile: SelfSimilarProfile,
                        mu_floor: float = MU_FLOOR):
    """Return (f, df_formula) with f = int w (mu - M_a) d eta, for theta = 2 only.

    df_formula = -int ((mu + M_a)/2 w_eta^2 + (mu^2 - (R_a - alpha(1-alpha) eta^2/2))(mu - M_a)).
    """
    if state.theta != 2.0:
        raise DomainError(f"the critical functional needs theta = 2, got {state.theta!r}")
    _check_match(state, profile)
    eta = state.eta_grid
    a = profile.alpha
    M, _ = eval_stationary_profile(eta, profile)
    f = _trapz(state.w * (state.mu - M), eta)
    we = _w_eta(state, mu_floor)
    base = profile.R_a - 0.5 * a * (1.0 - a) * eta**2
    integrand = 0.5 * (state.mu + M) * we**2 + (state.mu**2 - base) * (state.mu - M)
    return f, -_trapz(integrand, eta)


@dataclass(frozen=True)
class MetricsTable:
    t: np.ndarray
    p: float
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray

    def rows(self):
        return zip(self.t, self.D1, self.D2, self.D3)


def _norm(f, dx, p):
    if np.isinf(p):
        return float(np.max(np.abs(f)))
    return float((np.sum(np.abs(f) ** p) * dx) ** (1.0 / p))


def convergence_metrics(m: Field, u: Field, profile: SelfSimilarProfile, p: float,
                        t_samples, time_shift: float = 0.0, center: float = 0.0) -> MetricsTable:
    """D1, D2, D3 at each t, against the self-similar pair at time t + time_shift.

    m is compared through exact cell averages of the profile; u_x is taken by
    centred differences and u_t from the HJ equation, u_t = u_x^2/2 - m^theta.
    The profile gradient is continued outside its support; it only enters
    multiplied by m.
    """
    p = float(p)
    if not p >= 1:
        raise DomainError(f"p must be >= 1 or inf, got {p!r}")
    g = m.grid
    ts = np.atleast_1d(np.asarray(t_samples, dtype=float))
    a, th = profile.alpha, profile.theta
    inv_p = 0.0 if np.isinf(p) else 1.0 / p
    D1, D2, D3 = (np.empty(len(ts)) for _ in range(3))
    for k, t in enumerate(ts):
        if not g.t0 - 1e-9 <= t <= g.t1 + 1e-9:
            raise DomainError(f"t={t!r} outside the run window [{g.t0}, {g.t1}]")
        s = t + time_shift
        mt = m.at(t)
        ut = u.at(t)
        Mt = self_similar_cell_averages(g.edges, s, profile, center)
        ux = np.gradient(ut, g.dx)
        Mp, _, Ux = eval_self_similar(g.x - center, s, profile, extend=True)
        u_t = 0.5 * ux**2 - mt**th
        U_t = 0.5 * Ux**2 - Mp**th
        D1[k] = t ** (a * (1.0 - inv_p)) * _norm(mt - Mt, g.dx, p)
        scale = t ** (2.0 - a * (1.0 + inv_p))
        D2[k] = scale * _norm(mt * (ux - Ux) ** 2, g.dx, p)
        D3[k] = scale * _norm(mt * np.abs(u_t - U_t), g.dx, p)
    return MetricsTable(ts, p, D1, D2, D3)


def fit_exponential_rate(trace: LyapunovTrace, window) -> tuple:
    """Least-squares slope of log E on the window; returns (k_fit, r_squared)
    with E ~ exp(-2 k tau).  Fits with r_squared below 0.98 are flagged by a
    warning and should not be read as rates."""
    if trace.theta >= 2:
        raise DomainError(f"exponential rate applies for theta < 2, got {trace.theta!r}")
    lo, hi = window
    sel = (trace.tau >= lo - 1e-12) & (trace.tau <= hi + 1e-12)
    if np.count_nonzero(sel) < 3:
        raise DomainError("fit window holds fewer than 3 samples")
    E = trace.E[sel]
    if np.any(E <= 0):
        raise DomainError("E must be strictly positive on the fit window")
    tau = trace.tau[sel]
    y = np.log(E)
    slope, intercept = np.polyfit(tau, y, 1)
    resid = y - (slope * tau + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    if r2 < MIN_R_SQUARED:
        warnings.warn(f"exponential fit has r^2 = {r2:.3f} < {MIN_R_SQUARED}", stacklevel=2)
    return float(-slope / 2.0), float(r2)
