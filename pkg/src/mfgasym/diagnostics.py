"""Rate and structure checks on solver output.

Power-law rates are fitted by ordinary least squares on log-log samples at
geometric times t_k = t_lo 2^(k/4), one quarter of a dyadic scale apart.
Every check only reads its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from mfgasym.lagrangian import FreeBoundary, _edge_root
from mfgasym.profiles import DomainError, Params, Variant
from mfgasym.solver import Field

RATIO = 2.0**0.25


@dataclass(frozen=True)
class RateFit:
    quantity: str
    exponent_fit: float
    exponent_target: float
    r_squared: float
    window: tuple
    extras: dict = field(default_factory=dict)

    @property
    def error(self) -> float:
        return abs(self.exponent_fit - self.exponent_target)

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "exponent_fit": float(self.exponent_fit),
            "exponent_target": float(self.exponent_target),
            "r_squared": float(self.r_squared),
            "window": [float(w) for w in self.window],
            **{k: _plain(v) for k, v in self.extras.items()},
        }


def _plain(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.floating, float, np.integer, int)):
        return float(v)
    return v


def geometric_times(t_lo: float, t_hi: float, ratio: float = RATIO) -> np.ndarray:
    """Geometric samples from t_lo to t_hi with step ratio as close to ``ratio`` as fits."""
    n = max(int(round(np.log(t_hi / t_lo) / np.log(ratio))), 1)
    return t_lo * (t_hi / t_lo) ** (np.arange(n + 1) / n)


def loglog_fit(t, y, quantity: str, target: float, window, extras=None) -> RateFit:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 3:
        raise DomainError(f"{quantity}: fewer than 3 samples in the window")
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise DomainError(f"{quantity}: samples must be positive and finite")
    ly, lt = np.log(y), np.log(t)
    ss = np.sum((ly - ly.mean()) ** 2)
    if ss <= 1e-24 * max(1.0, np.sum(ly**2)):
        raise DomainError(f"{quantity}: zero variance in the samples, no rate to fit")
    slope, icpt = np.polyfit(lt, ly, 1)
    r2 = 1.0 - np.sum((ly - slope * lt - icpt) ** 2) / ss
    return RateFit(quantity, float(slope), float(target), float(max(r2, 0.0)),
                   (float(t[0]), float(t[-1])), dict(extras or {}))


def _window(grid, window, min_decades: float = 1.0):
    lo, hi = (max(grid.t0, 1e-12), grid.t1) if window is None else window
    if not (grid.t0 - 1e-9 <= lo < hi <= grid.t1 + 1e-9):
        raise DomainError(f"window {window!r} not inside the run [{grid.t0}, {grid.t1}]")
    if hi / lo < 10.0**min_decades * (1 - 1e-9):
        raise DomainError(f"window [{lo}, {hi}] spans less than {min_decades} decade(s)")
    return float(lo), float(hi)


def smoothing_check(m: Field, params: Params, window=None) -> RateFit:
    """Decay of ||m(., t)||_inf against t^-alpha, plus sup_t (1 + t^alpha) ||m(., t)||_inf."""
    g = m.grid
    lo, hi = _window(g, window)
    ts = geometric_times(lo, hi)
    peak = np.array([np.max(m.at(t)) for t in ts])
    all_peaks = np.max(m.values, axis=1)
    bound = float(np.max((1.0 + g.times**params.alpha) * all_peaks))
    return loglog_fit(ts, peak, "sup m", -params.alpha, (lo, hi),
                      {"sup_scaled_peak": bound})


def _stencil_derivatives(t_trace, y_trace, ts, step=2.0**0.125):
    """First and second derivatives at ``ts`` from centred 5-point quadratic fits
    on the stencil t r^j, j = -2..2, read off the trace by linear interpolation."""
    j = np.arange(-2, 3)
    d1, d2 = np.empty(len(ts)), np.empty(len(ts))
    for k, t in enumerate(ts):
        pts = t * step**j
        c = np.polyfit(pts - t, np.interp(pts, t_trace, y_trace), 2)
        d1[k], d2[k] = c[1], 2.0 * c[0]
    return d1, d2


def free_boundary_rates(fb: FreeBoundary, params: Params, window=None) -> list:
    """Fits of gamma_R ~ t^alpha, |gamma_R'| ~ t^(alpha-1), -gamma_R'' ~ t^(alpha-2).

    Derivatives come from centred 5-point quadratic fits around each
    geometric sample, on a stencil of ratio 2^(1/8); the window is shrunk so
    the stencils stay inside the trace.  The convexity signs gamma_L'' > 0
    and gamma_R'' < 0 are recorded for every sample.  Planning runs are cut
    at the middle of the window, away from the prescribed terminal density.
    """
    t_all = fb.t_samples
    lo, hi = (t_all[0], t_all[-1]) if window is None else window
    if params.variant == Variant.PLANNING:
        hi = min(hi, 0.5 * (t_all[0] + t_all[-1]))
    if lo <= 0:
        raise DomainError("free boundary fits need t > 0")
    if not (t_all[0] - 1e-9 <= lo < hi <= t_all[-1] + 1e-9):
        raise DomainError(f"window ({lo}, {hi}) outside the trace")
    # derivative stencils span a factor 2^(1/4) either side of each sample
    lo = max(lo, t_all[0] * 2.0**0.25)
    hi = min(hi, t_all[-1] * 2.0**-0.25)
    if not hi > lo:
        raise DomainError("window too short for the derivative stencils")
    ts = geometric_times(lo, hi)
    if len(ts) < 5:
        raise DomainError("free boundary window holds fewer than 5 geometric samples")
    gl = np.interp(ts, t_all, fb.gamma_L)
    gr = np.interp(ts, t_all, fb.gamma_R)
    dR, ddR = _stencil_derivatives(t_all, fb.gamma_R, ts)
    ddL = _stencil_derivatives(t_all, fb.gamma_L, ts)[1]
    signs = {
        "gamma_L_convex": bool(np.all(ddL > 0)),
        "gamma_R_concave": bool(np.all(ddR < 0)),
        "min_ddgamma_L": float(ddL.min()),
        "max_ddgamma_R": float(ddR.max()),
    }
    a = params.alpha
    width = 0.5 * (gr - gl)
    center = 0.5 * (gr + gl)
    # gamma_R is measured from the centre of the initial support
    c0 = 0.5 * (fb.gamma_L[0] + fb.gamma_R[0])
    out = [
        loglog_fit(ts, gr - c0, "gamma_R", a, (lo, hi),
                   {"max_half_width": float(width.max()), "max_center_shift": float(
                       np.max(np.abs(center - c0)))}),
        loglog_fit(ts, np.abs(dR), "dgamma_R", a - 1.0, (lo, hi)),
    ]
    if np.all(ddR < 0):
        out.append(loglog_fit(ts, -ddR, "ddgamma_R", a - 2.0, (lo, hi), signs))
    else:
        out.append(RateFit("ddgamma_R", float("nan"), a - 2.0, 0.0, (lo, hi), signs))
    return out


def gradient_rate_check(u: Field, params: Params, window=None, m: Field | None = None) -> RateFit:
    """Decay of ||u_x(., t)||_inf against t^(alpha - 1).

    With ``m`` given, ||u_t||_inf from u_t = u_x^2/2 - m^theta is fitted too
    (target 2(alpha - 1)) and stored in the extras.
    """
    g = u.grid
    lo, hi = _window(g, window)
    ts = geometric_times(lo, hi)
    grads = [np.gradient(u.at(t), g.dx) for t in ts]
    sup = np.array([np.max(np.abs(q)) for q in grads])
    extras = {}
    a = params.alpha
    if m is not None:
        ut = np.array([np.max(np.abs(0.5 * q**2 - m.at(t) ** params.theta))
                       for q, t in zip(grads, ts)])
        f2 = loglog_fit(ts, ut, "sup u_t", 2.0 * (a - 1.0), (lo, hi))
        extras = {"u_t_exponent_fit": f2.exponent_fit,
                  "u_t_exponent_target": f2.exponent_target, "u_t_r_squared": f2.r_squared}
    return loglog_fit(ts, sup, "sup u_x", a - 1.0, (lo, hi), extras)


@dataclass(frozen=True)
class ConvexityReport:
    p: float
    times: np.ndarray
    phi: np.ndarray
    second_differences: np.ndarray
    tolerance: float

    @property
    def min_second_difference(self) -> float:
        return float(self.second_differences.min()) if len(self.second_differences) else 0.0

    @property
    def convex(self) -> bool:
        return self.min_second_difference >= -self.tolerance


def _geometric_levels(times, ratio=RATIO):
    # indices of the levels nearest to geometric times from the first positive level
    t = np.asarray(times)
    start = t[0] if t[0] > 0 else t[1]
    idx = np.unique([int(np.argmin(np.abs(t - s))) for s in geometric_times(start, t[-1], ratio)])
    return idx if t[0] > 0 else np.concatenate([[0], idx])


def displacement_convexity_check(m: Field, p: float, theta: float | None = None,
                                 tol_scale: float = 1.0, all_levels: bool = False) -> ConvexityReport:
    """Second divided differences of phi(t) = (p (p - 1))^-1 int m^p dx.

    phi is evaluated on every level.  Second differences are taken on the
    levels nearest to geometric times (ratio 2^(1/4)); on all levels with
    dt ~ dx the O(dx^(1 + p/theta)) jitter of the edge cells is amplified by
    1/dt^2 and swamps phi''.  ``all_levels`` differences every level instead.
    With ``theta`` given, int m^p is integrated with m^theta piecewise linear
    and sub-cell support edges (see ``power_integral``), otherwise by the
    cell sum.  The tolerance is tol_scale (dx + max dt) max|phi''|.
    """
    p = float(p)
    if p <= 0 or p == 1:
        raise DomainError(f"p must lie in (0, 1) or (1, inf), got {p!r}")
    g = m.grid
    t = np.asarray(g.times)
    if theta is None:
        integral = np.sum(m.values**p, axis=1) * g.dx
    else:
        integral = np.array([power_integral(row, g.x, g.dx, theta, p) for row in m.values])
    phi = integral / (p * (p - 1.0))
    sel = np.arange(len(t)) if all_levels or len(t) < 3 else _geometric_levels(t)
    ts, ps = t[sel], phi[sel]
    if len(ts) < 3:
        return ConvexityReport(p, ts, ps, np.zeros(0), 0.0)
    h = np.diff(ts)
    slope = np.diff(ps) / h
    dd = 2.0 * np.diff(slope) / (h[:-1] + h[1:])
    scale = float(np.max(np.abs(dd)))
    tol = tol_scale * (g.dx + float(np.max(np.diff(t)))) * scale
    return ConvexityReport(p, ts, ps, dd, tol)


def _pressure_nodes(m_row, x, dx, theta: float, threshold: float = 1e-10):
    """Nodes (xs, ps) of the piecewise linear pressure P = m^theta on its support.

    The partially filled edge cells are replaced by the support edges, the
    zeros of the linear extension of P from the two adjacent interior cells.
    Returns None when fewer than 5 cells are occupied.
    """
    P = np.asarray(m_row, dtype=float) ** theta
    idx = np.flatnonzero(P > threshold)
    if idx.size == 0 or idx[-1] - idx[0] < 4:
        return None
    i0, i1 = idx[0], idx[-1]
    xs = np.concatenate([[_edge_root(P, x, dx, i0, 1)], x[i0 + 1:i1],
                         [_edge_root(P, x, dx, i1, -1)]])
    ps = np.concatenate([[0.0], P[i0 + 1:i1], [0.0]])
    return xs, ps


def _piecewise_power_integral(xs, ps, s: float) -> float:
    # int P^s dx with P linear on each piece: h (Pb^(s+1) - Pa^(s+1)) / ((s+1)(Pb - Pa))
    h = np.diff(xs)
    pa, pb = ps[:-1], ps[1:]
    dp = pb - pa
    flat = np.abs(dp) <= 1e-14 * np.maximum(np.abs(pa) + np.abs(pb), 1e-300)
    safe = np.where(flat, 1.0, dp)
    exact = (pb ** (s + 1.0) - pa ** (s + 1.0)) / ((s + 1.0) * safe)
    mid = (0.5 * (pa + pb)) ** s
    return float(np.sum(h * np.where(flat, mid, exact)))


def power_integral(m_row, x, dx, theta: float, p: float) -> float:
    """int m^p dx with m^theta piecewise linear, edges as in ``_pressure_nodes``.

    Falls back to the cell sum when the support is too narrow to resolve.
    """
    nodes = _pressure_nodes(m_row, x, dx, theta)
    if nodes is None:
        return float(np.sum(np.asarray(m_row, dtype=float) ** p) * dx)
    return _piecewise_power_integral(*nodes, p / theta)


def energy_density(m_row, x, dx, theta: float, eps: float) -> float:
    """int ((m^((theta + eps)/2))_x)^2 dx with m^theta piecewise linear between cell centres.

    On a piece where the pressure P = m^theta is linear with slope s the
    integrand is r^2 s^2 P^(2r - 2), r = (theta + eps)/(2 theta), which
    integrates exactly to r^2 |s| |P_b^(2r-1) - P_a^(2r-1)| / (2r - 1).  With
    the edges from ``_pressure_nodes`` the edge singularity is integrated
    exactly.
    """
    nodes = _pressure_nodes(m_row, x, dx, theta)
    if nodes is None:
        if np.any(np.asarray(m_row) > 0):
            raise DomainError("support narrower than 5 cells, energy not resolved")
        return 0.0
    xs, ps = nodes
    r = 0.5 * (theta + eps) / theta
    e = 2.0 * r - 1.0
    h = np.maximum(np.diff(xs), 1e-300)
    slope = np.abs(np.diff(ps)) / h
    return float(np.sum(r * r * slope * np.abs(np.diff(ps**e))) / e)


def energy_rate_check(m: Field, params: Params, eps: float, window=None) -> RateFit:
    """I(t0) = int_{t0/2}^{2 t0} int ((m^((theta + eps)/2))_x)^2 dx dt against t0^-(1 - alpha(1 - eps)).

    ``window`` bounds t0; every block [t0/2, 2 t0] must lie inside the run.
    The default is [max(2 t_start, T/20), T/4].
    """
    if not 0 < eps < 1:
        raise DomainError(f"eps must lie in (0, 1), got {eps!r}")
    g = m.grid
    lo, hi = (max(2.0 * g.t0, 0.05 * g.t1), 0.25 * g.t1) if window is None else window
    if not (lo > 0 and 0.5 * lo >= g.t0 - 1e-9 and 2.0 * hi <= g.t1 + 1e-9 and lo < hi):
        raise DomainError(f"t0 window ({lo}, {hi}) needs blocks [t0/2, 2 t0] inside "
                          f"[{g.t0}, {g.t1}]")
    times = np.asarray(g.times)
    dens = np.array([energy_density(row, g.x, g.dx, params.theta, eps) for row in m.values])
    ts = geometric_times(lo, hi)
    I = np.empty(len(ts))
    for k, t0 in enumerate(ts):
        sel = (times >= 0.5 * t0 - 1e-12) & (times <= 2.0 * t0 + 1e-12)
        if np.count_nonzero(sel) < 3:
            raise DomainError(f"block around t0={t0!r} holds fewer than 3 time levels")
        I[k] = integrate.trapezoid(dens[sel], times[sel])
    target = -(1.0 - params.alpha * (1.0 - eps))
    return loglog_fit(ts, I, f"energy eps={eps!r}", target, (lo, hi))


@dataclass(frozen=True)
class HamiltonianReport:
    times: np.ndarray
    H: np.ndarray
    drift: float


def hamiltonian_conservation(u: Field, m: Field, theta: float) -> HamiltonianReport:
    """H(t) = int (m u_x^2 / 2 - m^(theta+1)/(theta+1)) dx and its relative drift
    max |H(t) - H(t0)| / (|H(t0)| + 1)."""
    g = m.grid
    ux = np.gradient(u.values, g.dx, axis=1)
    mv = m.values
    H = np.sum(0.5 * mv * ux**2 - mv ** (theta + 1.0) / (theta + 1.0), axis=1) * g.dx
    drift = float(np.max(np.abs(H - H[0])) / (abs(H[0]) + 1.0))
    return HamiltonianReport(np.asarray(g.times), H, drift)
