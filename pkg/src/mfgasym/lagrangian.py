"""Optimal trajectories, free boundary curves and Lagrangian-coordinate density.

The flow gamma(x, t) solves d/dt gamma = -u_x(gamma, t), gamma(x, t0) = x.
Mass conservation along the flow reads gamma_x(x, t) m(gamma(x, t), t) = m0(x).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from mfgasym.profiles import DomainError
from mfgasym.solver import Field, Grid


class _Velocity:
    """-u_x from centred differences, linear in x and in t between levels."""

    def __init__(self, u: Field):
        self.grid = u.grid
        self._u = u.values
        self._row = lru_cache(maxsize=8)(self._gradient_row)

    def _gradient_row(self, n):
        return -np.gradient(self._u[n], self.grid.dx)

    def __call__(self, t, pts):
        g = self.grid
        times = g.times
        j = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
        s = min(max((t - times[j]) / (times[j + 1] - times[j]), 0.0), 1.0)
        lo = np.interp(pts, g.x, self._row(j))
        if s == 0.0:
            return lo
        hi = np.interp(pts, g.x, self._row(j + 1))
        return (1.0 - s) * lo + s * hi


def _rk2(vel, x0, times):
    """Midpoint rule along ``times``; positions are clipped to the domain and flagged."""
    g = vel.grid
    out = np.empty((len(x0), len(times)))
    out[:, 0] = x0
    left = np.zeros(len(x0), dtype=bool)
    y = np.array(x0, dtype=float)
    for n in range(len(times) - 1):
        t, dt = times[n], times[n + 1] - times[n]
        k1 = vel(t, y)
        k2 = vel(t + 0.5 * dt, y + 0.5 * dt * k1)
        y = y + dt * k2
        bad = (y < g.x_min) | (y > g.x_max)
        left |= bad
        y = np.clip(y, g.x_min, g.x_max)
        out[:, n + 1] = y
    return out, left


@dataclass(frozen=True, eq=False)
class FlowField:
    source_points: np.ndarray
    times: np.ndarray
    gamma: np.ndarray
    gamma_x: np.ndarray
    left_domain: np.ndarray

    def crossings(self) -> int:
        """Number of (time, neighbour pair) events where the ordering fails."""
        return int(np.count_nonzero(np.diff(self.gamma, axis=0) <= 0))


def integrate_flow(u: Field, source_points, grid: Grid | None = None) -> FlowField:
    """Integrate trajectories from ``source_points`` at the first time level."""
    grid = u.grid if grid is None else grid
    src = np.asarray(source_points, dtype=float)
    if src.ndim != 1 or len(src) < 2 or np.any(np.diff(src) <= 0):
        raise DomainError("source_points must be an increasing array of at least 2 points")
    gamma, left = _rk2(_Velocity(u), src, grid.times)
    gamma_x = np.gradient(gamma, src, axis=0)
    for arr in (gamma, gamma_x, left):
        arr.flags.writeable = False
    return FlowField(src, np.asarray(grid.times), gamma, gamma_x, left)


def mass_identity_error(flow: FlowField, m: Field, m0_points=None) -> np.ndarray:
    """Relative error of gamma_x m(gamma, t) = m0(x) along each trajectory (max over t)."""
    g = m.grid
    m0 = np.interp(flow.source_points, g.x, m.values[0]) if m0_points is None else m0_points
    err = np.zeros(len(flow.source_points))
    for n in range(len(flow.times)):
        mt = np.interp(flow.gamma[:, n], g.x, m.values[n])
        err = np.maximum(err, np.abs(flow.gamma_x[:, n] * mt - m0) / m0)
    return err


@dataclass(frozen=True, eq=False)
class FreeBoundary:
    t_samples: np.ndarray
    gamma_L: np.ndarray
    gamma_R: np.ndarray
    dgamma_L: np.ndarray
    dgamma_R: np.ndarray

    def at(self, t):
        """(gamma_L, gamma_R, dgamma_L, dgamma_R) linearly interpolated at t."""
        ts = self.t_samples
        return tuple(np.interp(t, ts, a)
                     for a in (self.gamma_L, self.gamma_R, self.dgamma_L, self.dgamma_R))


def _edge_root(p, x, dx, i, step):
    # zero of the line through the first two cells fully inside the support,
    # kept within the outermost occupied cell i
    j, k = i + step, i + 2 * step
    if 0 <= k < len(p) and p[k] > p[j] > 0:
        r = x[j] - step * p[j] * dx / (p[k] - p[j])
        return float(np.clip(r, x[i] - 0.5 * dx, x[i] + 0.5 * dx))
    return float(x[i] - step * 0.5 * dx)


def local_derivative(t, y, half_window: int = 6):
    """First derivative from a local quadratic least-squares fit on 2 half_window + 1 samples."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(t)
    w = min(half_window, (n - 1) // 2)
    if w < 1:
        return np.gradient(y, t)
    out = np.empty(n)
    for k in range(n):
        lo = min(max(k - w, 0), n - 2 * w - 1)
        sl = slice(lo, lo + 2 * w + 1)
        c = np.polyfit(t[sl] - t[k], y[sl], 2)
        out[k] = c[1]
    return out


def extract_free_boundary(m: Field, theta: float, threshold: float = 1e-10) -> FreeBoundary:
    """Edges of {m > 0} at each level.

    The outermost cells with m^theta > threshold are located first; the edge
    is then the zero of the linear extrapolation of m^theta from the
    adjacent interior cells.  Velocities come from local quadratic fits,
    which damp the sub-cell localisation noise.
    """
    g = m.grid
    n = g.nt + 1
    gl, gr = np.empty(n), np.empty(n)
    x, dx = g.x, g.dx
    for k in range(n):
        p = m.values[k] ** theta
        idx = np.flatnonzero(p > threshold)
        if idx.size == 0:
            raise DomainError(f"empty support at time index {k} (t={g.times[k]!r})")
        gl[k] = _edge_root(p, x, dx, idx[0], 1)
        gr[k] = _edge_root(p, x, dx, idx[-1], -1)
    t = np.asarray(g.times)
    return FreeBoundary(t, gl, gr, local_derivative(t, gl), local_derivative(t, gr))


def lagrangian_density(m: Field, flow: FlowField, theta: float) -> np.ndarray:
    """p(x, t) = m(gamma(x, t), t)^theta on the (source, time) lattice of the flow."""
    g = m.grid
    if len(flow.times) != g.nt + 1:
        raise DomainError("flow and density live on different time levels")
    p = np.empty_like(flow.gamma)
    for n in range(len(flow.times)):
        p[:, n] = np.interp(flow.gamma[:, n], g.x, m.values[n], left=0.0, right=0.0) ** theta
    return p


def harnack_ratio(p: np.ndarray, flow: FlowField, x0: float, t0: float, rho: float,
                  theta: float) -> float:
    """sup/inf of p over the intrinsic rectangle of radius rho centred at (x0, t0).

    The rectangle has half width t0^(-alpha/2) rho in the label x and half
    height t0^(alpha/2) (theta p(x0, t0))^(-1/2) rho in time.
    """
    a = 2.0 / (2.0 + theta)
    src, times = flow.source_points, flow.times
    i0 = int(np.argmin(np.abs(src - x0)))
    n0 = int(np.argmin(np.abs(times - t0)))
    p0 = p[i0, n0]
    if not p0 > 0:
        raise DomainError("p vanishes at the rectangle centre")
    hx = t0 ** (-a / 2) * rho
    ht = t0 ** (a / 2) * (theta * p0) ** -0.5 * rho
    sx = np.abs(src - x0) <= hx
    st = np.abs(times - t0) <= ht
    block = p[np.ix_(sx, st)]
    if block.size == 0 or not block.min() > 0:
        raise DomainError("intrinsic rectangle leaves the support")
    return float(block.max() / block.min())


@dataclass(frozen=True)
class ProbeResult:
    x: float
    t: float
    case: int | None
    expected_case: int
    contact_time: float | None
    linearity_residual: float
    ux: float
    gradient_bound: float
    bound_holds: bool
    inward_drift: float = 0.0


@dataclass(frozen=True)
class TrajectoryReport:
    probes: list
    tolerance: float

    @property
    def all_classified(self) -> bool:
        return all(p.case is not None for p in self.probes)

    @property
    def all_match_expected(self) -> bool:
        return all(p.case == p.expected_case for p in self.probes)

    @property
    def max_linearity_residual(self) -> float:
        return max(p.linearity_residual for p in self.probes)

    @property
    def bound_holds(self) -> bool:
        return all(p.bound_holds for p in self.probes)


def _chord_residual(beta, s):
    if len(s) < 3:
        return 0.0
    line = beta[0] + (beta[-1] - beta[0]) * (s - s[0]) / (s[-1] - s[0])
    return float(np.max(np.abs(beta - line)))


def check_vanishing_trajectories(u: Field, fb: FreeBoundary, probes,
                                 bound_rtol: float = 2e-2) -> TrajectoryReport:
    """Classify the optimal trajectories from points left of the support.

    Case 1: beta stays put.  Case 2: beta is a straight line ending at
    (gamma_L(T), T).  Case 3: beta is straight until it meets gamma_L at some
    t* < T and then stays on it.  Contact and straightness are judged with the
    position tolerance 2 dx.  After contact the discrete path may creep into
    the support, since interior flow lines spread like t^alpha; that creep is
    reported as ``inward_drift`` and only detachment to the left rules out
    case 3.  The gradient bound
    |u_x(x, t)| <= max(|gamma_L'(t)|, |gamma_R'(t)|) is checked with relative
    slack ``bound_rtol``.
    """
    g = u.grid
    tol = 2.0 * g.dx
    vel = _Velocity(u)
    T = g.t1
    gT, _, dgT, _ = fb.at(T)
    results = []
    for x, t in probes:
        x, t = float(x), float(t)
        if not g.t0 <= t < T:
            raise DomainError(f"probe time {t!r} outside [{g.t0}, {T})")
        gl, gr, dgl, dgr = fb.at(t)
        if x >= gl:
            raise DomainError(f"probe ({x!r}, {t!r}) is inside the support")
        s = np.concatenate([[t], g.times[g.times > t]])
        beta = _rk2(vel, np.array([x]), s)[0][0]
        edge = np.interp(s, fb.t_samples, fb.gamma_L)
        touch = np.flatnonzero(beta >= edge - tol)
        k_star = int(touch[0]) if touch.size else None
        full_line = _chord_residual(beta, s)
        case, resid, t_star, drift = None, full_line, None, 0.0
        if np.max(np.abs(beta - x)) <= tol:
            case = 1
        else:
            if k_star is not None and 0 < k_star < len(s) - 1:
                seg = _chord_residual(beta[: k_star + 1], s[: k_star + 1])
                slope = (beta[k_star] - x) / (s[k_star] - t)
                # a genuine bend: the initial line would pass left of gamma_L(T)
                bend = gT - (x + slope * (T - t))
                # after contact the path must not detach back into the vanishing set
                attached = np.all(beta[k_star:] >= edge[k_star:] - tol)
                drift = float(np.max(beta[k_star:] - edge[k_star:]))
                if seg <= tol and attached and bend > tol:
                    case, resid, t_star = 3, seg, float(s[k_star])
            if case is None and full_line <= tol and abs(beta[-1] - gT) <= tol:
                case, t_star = 2, T
        line_at_t = gT + dgT * (t - T)
        expected = 1 if x <= gT else (2 if x <= line_at_t else 3)
        ux = float(-vel(t, np.array([x]))[0])
        bound = max(abs(dgl), abs(dgr))
        results.append(ProbeResult(x, t, case, expected, t_star, resid, ux, bound,
                                   abs(ux) <= bound * (1.0 + bound_rtol) + 1e-12, drift))
    return TrajectoryReport(results, tol)
