"""Forward-backward solver for the MFG system on a truncated interval.

    -u_t + u_x^2 / 2 = m^theta,      m_t - (m u_x)_x = 0,

with homogeneous Neumann walls, m(., t0) = m0 and either the terminal cost
u(., t1) = c_T m^theta(., t1) or a prescribed terminal density.  Time is
absolute: a run on [t0, t1] uses c_T = kappa_T * t1.

Two solution methods are available.  The default minimises the convex
discrete action in mass-Lagrangian coordinates by Newton's method (see
``_action``) and then rebuilds Eulerian fields.  ``fictitious_play`` runs the
averaged best-response iteration on the explicit Godunov/upwind pair.  It is
kept for reference: grid-scale dips of m(., t1) feed back through the
terminal cost and the iteration diverges within a few steps.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import interpolate, special

from mfgasym import _kernels
from mfgasym._action import ActionProblem
from mfgasym.profiles import (
    DomainError,
    Params,
    SelfSimilarProfile,
    make_profile,
    quadratic_power_cell_averages,
    self_similar_cell_averages,
)

CFL_LIMIT = 0.9


class ConfigurationError(ValueError):
    """Grid or run settings that the scheme cannot honour."""


# ---------------------------------------------------------------- grids and fields


@dataclass(frozen=True, eq=False)
class Grid:
    """Cell-centred space grid and a (possibly graded) list of time levels."""

    x_min: float
    x_max: float
    nx: int
    t0: float
    t1: float
    nt: int
    times: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.nx < 2 or self.nt < 1:
            raise ConfigurationError(f"need nx >= 2 and nt >= 1, got nx={self.nx}, nt={self.nt}")
        if not self.x_max > self.x_min:
            raise ConfigurationError("x_max must exceed x_min")
        if self.t0 < 0 or not self.t1 > self.t0:
            raise ConfigurationError(f"bad time window [{self.t0}, {self.t1}]")
        if self.times is None:
            times = np.linspace(self.t0, self.t1, self.nt + 1)
        else:
            times = np.array(self.times, dtype=float)
            if times.shape != (self.nt + 1,) or np.any(np.diff(times) <= 0):
                raise ConfigurationError("times must be increasing with nt + 1 entries")
            times[0], times[-1] = self.t0, self.t1
        times.flags.writeable = False
        object.__setattr__(self, "times", times)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        return self.x_min + np.arange(self.nx + 1) * self.dx

    def refined(self, factor: int = 2) -> "Grid":
        """Same window with dx and every time step divided by ``factor``."""
        t = self.times
        sub = t[:-1, None] + np.outer(np.diff(t), np.arange(factor) / factor)
        fine = np.append(sub.ravel(), t[-1])
        return Grid(self.x_min, self.x_max, self.nx * factor, self.t0, self.t1,
                    self.nt * factor, fine)

    def time_index(self, t: float) -> int:
        """Index of the time level nearest to t."""
        return int(np.argmin(np.abs(self.times - t)))


def domain_half_width(params: Params, t1: float, factor: float = 3.0) -> float:
    return factor * (1.0 + t1**params.alpha)


def graded_times(t0: float, t1: float, dx: float, speed, cfl: float) -> np.ndarray:
    """Time levels with dt_n = cfl * dx / speed(t_n), rescaled to end exactly at t1."""
    if not 0 < cfl <= CFL_LIMIT:
        raise ConfigurationError(f"design cfl {cfl} outside (0, {CFL_LIMIT}]")
    levels = [t0]
    t = t0
    while t < t1:
        t = t + cfl * dx / max(speed(t), 1e-12)
        levels.append(t)
    levels = np.asarray(levels)
    return t0 + (levels - t0) * (t1 - t0) / (levels[-1] - t0)


def build_grid(params: Params, m0_support: tuple, nx: int, t0: float = 0.0,
               t1: float | None = None, domain_factor: float = 3.0, cfl: float = 0.45,
               uniform: bool = False, half_width: float | None = None) -> Grid:
    """Grid for a run on [t0, t1] (t1 defaults to t0 + horizon).

    Steps are graded so that the edge speed of the self-similar solution
    matched to the initial support sits at the design cfl; ``uniform`` uses
    the smallest such step everywhere instead.
    """
    t1 = t0 + params.horizon if t1 is None else t1
    L = domain_half_width(params, t1, domain_factor)
    if half_width is not None:
        if half_width < L:
            raise ConfigurationError(f"half width {half_width} below K(1 + t1^alpha) = {L}")
        L = half_width
    a0, b0 = m0_support
    if not (-L < a0 < b0 < L):
        raise ConfigurationError(f"initial support ({a0}, {b0}) not inside (-{L}, {L})")
    dx = 2 * L / nx
    profile = make_profile(params.mass, params.theta)
    t_shift = matched_time(profile, 0.5 * (b0 - a0))

    def speed(t):
        s = t - t0 + t_shift
        return profile.alpha * profile.support_half_width * s ** (profile.alpha - 1.0)

    times = graded_times(t0, t1, dx, speed, cfl)
    if uniform:
        n = int(np.ceil((t1 - t0) / np.min(np.diff(times))))
        times = np.linspace(t0, t1, n + 1)
    return Grid(-L, L, nx, t0, t1, len(times) - 1, times)


def matched_time(profile: SelfSimilarProfile, half_width: float) -> float:
    """Time at which the self-similar support has the given half width."""
    return (half_width / profile.support_half_width) ** (1.0 / profile.alpha)


class Kind(str, enum.Enum):
    DENSITY = "density"
    VALUE = "value"
    VELOCITY = "velocity"


@dataclass(frozen=True, eq=False)
class Field:
    values: np.ndarray
    grid: Grid
    kind: Kind

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.nt + 1, self.grid.nx):
            raise ConfigurationError(f"field shape {v.shape} does not match grid")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kind", Kind(self.kind))

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation in time of the spatial slice at t."""
        times = self.grid.times
        if not times[0] - 1e-9 <= t <= times[-1] + 1e-9:
            raise DomainError(f"t={t} outside the run window [{times[0]}, {times[-1]}]")
        j = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
        w = min(max((t - times[j]) / (times[j + 1] - times[j]), 0.0), 1.0)
        if w == 0.0:
            return self.values[j]
        if w == 1.0:
            return self.values[j + 1]
        return (1 - w) * self.values[j] + w * self.values[j + 1]

    def mass(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.dx


@dataclass
class SolveReport:
    iterations: int
    residual_history: list
    converged: bool
    wall_time: float
    method: str = "lagrangian"
    max_cfl: float = 0.0
    terminal_gap: float | None = None
    extras: dict = field(default_factory=dict)
    lagrangian: object = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "iterations": int(self.iterations),
            "residual_history": [float(r) for r in self.residual_history],
            "converged": bool(self.converged),
            "wall_time": float(self.wall_time),
            "method": self.method,
            "max_cfl": float(self.max_cfl),
        }
        if self.terminal_gap is not None:
            out["terminal_gap"] = float(self.terminal_gap)
        out.update(self.extras)
        return out


# ---------------------------------------------------------------- initial data


@dataclass(frozen=True)
class InitialDatum:
    """A density known through its support, cumulative mass and quantile function."""

    a: float
    b: float
    mass: float
    cdf: Callable
    quantile: Callable

    def cell_averages(self, grid: Grid) -> np.ndarray:
        cum = self.cdf(np.clip(grid.edges, self.a, self.b))
        return np.diff(cum) / grid.dx


def quadratic_power_datum(a0: float, b0: float, mass: float, theta: float) -> InitialDatum:
    """Density proportional to ((x - a0)(b0 - x))_+^(1/theta) with the given mass."""
    if not b0 > a0:
        raise DomainError(f"degenerate interval ({a0}, {b0})")
    if not mass > 0:
        raise DomainError("mass must be positive")
    p = 1.0 + 1.0 / theta
    L = b0 - a0

    def cdf(x):
        return mass * special.betainc(p, p, np.clip((np.asarray(x) - a0) / L, 0.0, 1.0))

    def quantile(y):
        return a0 + L * special.betaincinv(p, p, np.clip(np.asarray(y) / mass, 0.0, 1.0))

    return InitialDatum(a0, b0, mass, cdf, quantile)


def bump_datum(a0: float, b0: float, mass: float, theta: float) -> InitialDatum:
    return quadratic_power_datum(a0, b0, mass, theta)


def self_similar_datum(profile: SelfSimilarProfile, t: float, center: float = 0.0) -> InitialDatum:
    """The self-similar density at time t as an exact datum."""
    h = float(profile.edge(t))
    return quadratic_power_datum(center - h, center + h, profile.mass, profile.theta)


def support_interval(m: np.ndarray, grid: Grid, theta: float, threshold: float = 1e-10):
    """Outermost points where m^theta vanishes, located by linear extrapolation of m^theta."""
    p = np.asarray(m, dtype=float) ** theta
    idx = np.flatnonzero(p > threshold)
    if idx.size == 0:
        raise DomainError("density has empty support")
    x, dx = grid.x, grid.dx
    i, j = idx[0], idx[-1]

    def root(k, nb, sgn):
        if 0 <= nb < len(p):
            slope = (p[nb] - p[k]) / dx
            if slope > 0:
                return x[k] - sgn * min(p[k] / slope, dx)
        return x[k] - sgn * 0.5 * dx

    return root(i, i + 1, 1), root(j, j - 1, -1)


def datum_from_array(m0: np.ndarray, grid: Grid, theta: float) -> InitialDatum:
    """Monotone (PCHIP) reconstruction of the cumulative mass of cell averages."""
    m0 = np.asarray(m0, dtype=float)
    a, b = support_interval(m0, grid, theta)
    e = grid.edges
    cum = np.concatenate([[0.0], np.cumsum(m0) * grid.dx])
    total = cum[-1]
    keep = (e > a) & (e < b)
    xs = np.concatenate([[a], e[keep], [b]])
    ys = np.concatenate([[0.0], cum[keep], [total]])
    ys = np.maximum.accumulate(ys)
    # drop flat stretches so the inverse is well defined
    uniq = np.concatenate([[True], np.diff(ys) > 0])
    F = interpolate.PchipInterpolator(xs, ys)
    Q = interpolate.PchipInterpolator(ys[uniq], xs[uniq])

    def cdf(x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= a, 0.0, np.where(x >= b, total, F(np.clip(x, a, b))))

    def quantile(y):
        return Q(np.clip(np.asarray(y, dtype=float), 0.0, total))

    return InitialDatum(a, b, total, cdf, quantile)


def make_bump_initial(a0: float, b0: float, mass: float, theta: float, grid: Grid,
                      c: float | None = None) -> np.ndarray:
    """Bump with m0^theta = c (x - a0)(b0 - x) on (a0, b0), as exact cell averages.

    The constant c is set by the requested mass unless given explicitly.
    """
    if not b0 > a0:
        raise DomainError(f"degenerate interval ({a0}, {b0})")
    if not grid.x_min < a0 < b0 < grid.x_max:
        raise DomainError("bump interval must lie strictly inside the domain")
    if c is None:
        if not mass > 0:
            raise DomainError("mass must be positive")
        c = bump_constant(a0, b0, mass, theta)
    return quadratic_power_cell_averages(grid.edges, a0, b0, c, theta)


def bump_constant(a0: float, b0: float, mass: float, theta: float) -> float:
    """c such that the bump (c (x - a0)(b0 - x))^(1/theta) carries ``mass``."""
    unit = quadratic_power_cell_averages(np.array([a0, b0]), a0, b0, 1.0, theta)[0] * (b0 - a0)
    return (mass / unit) ** theta


def _check_initial(m0: np.ndarray, grid: Grid):
    if m0.shape != (grid.nx,):
        raise DomainError("m0 does not match the grid")
    if np.any(m0 < 0) or not np.all(np.isfinite(m0)):
        raise DomainError("m0 must be finite and nonnegative")
    if not m0.sum() > 0:
        raise DomainError("m0 has zero mass")
    if m0[0] > 0 or m0[-1] > 0:
        raise DomainError("m0 must be supported strictly inside the domain")


# ---------------------------------------------------------------- explicit operators


def _check_cfl(c: float, grid: Grid, what: str):
    if not c <= CFL_LIMIT:
        raise ConfigurationError(
            f"{what}: CFL number {c:.3f} exceeds {CFL_LIMIT} with dt={grid.dt.max():.4g}, "
            f"dx={grid.dx:.4g}; reduce dt"
        )


def _as_values(m, grid: Grid) -> np.ndarray:
    v = m.values if isinstance(m, Field) else np.asarray(m, dtype=float)
    if v.shape != (grid.nt + 1, grid.nx):
        raise ConfigurationError("field does not match the grid")
    return np.ascontiguousarray(v, dtype=float)


def hj_backward(m, terminal_u, grid: Grid, theta: float) -> Field:
    """Backward Godunov sweep for -u_t + u_x^2/2 = m^theta with u(., t1) = terminal_u."""
    mv = _as_values(m, grid)
    uT = np.ascontiguousarray(terminal_u, dtype=float)
    if uT.shape != (grid.nx,) or not np.all(np.isfinite(uT)):
        raise DomainError("terminal_u must be a finite array on the grid")
    out = np.empty_like(mv)
    c = _kernels.hj_backward_kernel(mv, float(theta), uT, grid.times, grid.dx, out)
    _check_cfl(c, grid, "hj_backward")
    return Field(out, grid, Kind.VALUE)


def transport_forward(m0, u, grid: Grid) -> Field:
    """Conservative upwind transport of m0 by the velocity -u_x."""
    m0 = np.ascontiguousarray(m0, dtype=float)
    if np.any(m0 < 0):
        raise DomainError("negative initial density")
    if not np.sum(m0) > 0:
        raise DomainError("initial density has zero mass")
    uv = _as_values(u, grid)
    out = np.empty((grid.nt + 1, grid.nx))
    c = _kernels.transport_kernel(m0, uv, grid.times, grid.dx, out)
    _check_cfl(c, grid, "transport_forward")
    return Field(out, grid, Kind.DENSITY)


# ---------------------------------------------------------------- Lagrangian method


@dataclass(frozen=True, eq=False)
class LagrangianSolution:
    """Node trajectories X[n, j], cell masses w and node values of u."""

    X: np.ndarray
    w: np.ndarray
    times: np.ndarray
    u: np.ndarray
    velocity: np.ndarray

    @property
    def edges(self):
        return self.X[:, 0], self.X[:, -1]


def chebyshev_nodes(a: float, b: float, n_cells: int) -> np.ndarray:
    """Nodes clustered at both ends, which keeps the degenerate edge cells small."""
    s = np.arange(n_cells + 1) / n_cells
    X = 0.5 * (a + b) - 0.5 * (b - a) * np.cos(np.pi * s)
    X[0], X[-1] = a, b
    return X


def _node_pressure(X, w, theta):
    d = np.diff(X, axis=-1)
    rho = np.zeros(X.shape)
    # node density from the two adjacent cells; the free boundary carries zero
    rho[..., 1:-1] = (w[:-1] + w[1:]) / (d[..., :-1] + d[..., 1:])
    return rho**theta


def _node_velocity(X, times):
    return np.gradient(X, times, axis=0, edge_order=2)


def _value_along_trajectories(X, w, times, theta, uT):
    """Integrate d/dt u(X(t), t) = -(|X'|^2/2 + m^theta) backward from uT."""
    P = _node_pressure(X, w, theta)
    U = np.empty_like(X)
    U[-1] = uT
    for n in range(len(times) - 2, -1, -1):
        dt = times[n + 1] - times[n]
        vel = (X[n + 1] - X[n]) / dt
        U[n] = U[n + 1] + dt * (0.5 * vel**2 + 0.5 * (P[n] + P[n + 1]))
    return U


def _eulerian_density(sol: LagrangianSolution, grid: Grid) -> np.ndarray:
    cum = np.concatenate([[0.0], np.cumsum(sol.w)])
    total = cum[-1]
    e = grid.edges
    out = np.empty((grid.nt + 1, grid.nx))
    for n in range(grid.nt + 1):
        Xn = sol.X[n]
        F = interpolate.PchipInterpolator(Xn, cum)
        C = np.where(e <= Xn[0], 0.0, np.where(e >= Xn[-1], total, F(np.clip(e, Xn[0], Xn[-1]))))
        out[n] = np.maximum(np.diff(C) / grid.dx, 0.0)
    return out


def _eulerian_value(sol: LagrangianSolution, grid: Grid, exterior_terminal) -> tuple:
    x = grid.x
    U = np.full((grid.nt + 1, grid.nx), np.nan)
    inside = np.zeros((grid.nt + 1, grid.nx), dtype=np.bool_)
    for n in range(grid.nt + 1):
        Xn = sol.X[n]
        k = (x >= Xn[0]) & (x <= Xn[-1])
        inside[n] = k
        H = interpolate.CubicHermiteSpline(Xn, sol.u[n], -sol.velocity[n])
        U[n, k] = H(x[k])
    U[-1, ~inside[-1]] = exterior_terminal(x[~inside[-1]])
    steps = _kernels.hj_exterior_kernel(U, inside, grid.times, grid.dx, 0.5)
    return U, steps


def _lagrangian_setup(m0, datum, params, grid, n_cells):
    m0 = np.ascontiguousarray(m0, dtype=float)
    _check_initial(m0, grid)
    if datum is None:
        datum = datum_from_array(m0, grid, params.theta)
    J = n_cells or max(64, grid.nx // 8)
    X0 = chebyshev_nodes(datum.a, datum.b, J)
    cum = datum.cdf(X0)
    cum[0], cum[-1] = 0.0, float(np.sum(m0) * grid.dx)
    w = np.diff(cum)
    if np.any(w <= 0):
        raise DomainError("initial density must be positive inside its support")
    return datum, X0, w


def _similarity_guess(X0, times, t0, theta, t_end_nodes=None):
    # dilate the initial nodes about their centre of mass like the self-similar flow
    a = 2.0 / (2.0 + theta)
    c = 0.5 * (X0[0] + X0[-1])
    mass_profile = make_profile(1.0, theta)
    ts = matched_time(mass_profile, 0.5 * (X0[-1] - X0[0]))
    scale = ((times - t0 + ts) / ts) ** a
    guess = c + np.outer(scale, X0 - c)
    if t_end_nodes is not None:
        # blend linearly in the similarity clock towards the prescribed end state
        s = (scale - 1.0) / (scale[-1] - 1.0)
        guess = np.outer(1 - s, X0) + np.outer(s, t_end_nodes)
    return guess


def _solve_lagrangian(m0, params, grid, tol, max_iter, datum, n_cells, mT=None,
                      datum_T=None):
    start = time.perf_counter()
    datum, X0, w = _lagrangian_setup(m0, datum, params, grid, n_cells)
    theta = float(params.theta)
    times = np.asarray(grid.times)
    if mT is None:
        cT = params.kappa_T * grid.t1
        prob = ActionProblem(X0, w, times, theta, cT=cT)
        guess = _similarity_guess(X0, times, grid.t0, theta)
        XT = None
    else:
        if datum_T is None:
            datum_T = datum_from_array(mT, grid, theta)
        cum = np.concatenate([[0.0], np.cumsum(w)])
        XT = datum_T.quantile(cum * (datum_T.mass / cum[-1]))
        XT[0], XT[-1] = datum_T.a, datum_T.b
        prob = ActionProblem(X0, w, times, theta, XT=XT)
        guess = _similarity_guess(X0, times, grid.t0, theta, t_end_nodes=XT)
    X, history, converged = prob.solve(guess, tol=tol, max_iter=max_iter)
    vel = _node_velocity(X, times)
    if mT is None:
        uT = cT * _node_pressure(X[-1], w, theta)
    else:
        # terminal value fixed up to a constant by u_x = -velocity
        vT = vel[-1]
        uT = np.concatenate([[0.0], np.cumsum(-0.5 * (vT[:-1] + vT[1:]) * np.diff(X[-1]))])
    U = _value_along_trajectories(X, w, times, theta, uT)
    sol = LagrangianSolution(X, w, times, U, vel)
    return sol, history, converged, time.perf_counter() - start


def _fields_from_lagrangian(sol, grid, exterior_terminal):
    m = _eulerian_density(sol, grid)
    U, steps = _eulerian_value(sol, grid, exterior_terminal)
    return Field(U, grid, Kind.VALUE), Field(m, grid, Kind.DENSITY), steps


# ---------------------------------------------------------------- fictitious play


def _warm_start(datum: InitialDatum, params: Params, grid: Grid) -> np.ndarray:
    profile = make_profile(datum.mass, params.theta)
    ts = matched_time(profile, 0.5 * (datum.b - datum.a))
    c = 0.5 * (datum.a + datum.b)
    return np.array([self_similar_cell_averages(grid.edges, t - grid.t0 + ts, profile, c)
                     for t in grid.times])


def _fictitious_play(m0, params, grid, tol, max_iter, picard, terminal, initial_guess):
    """Averaged best responses on the explicit scheme.  ``terminal`` maps the
    averaged terminal density to terminal values of u."""
    theta = float(params.theta)
    mbar = np.array(initial_guess, dtype=float)
    U = np.empty_like(mbar)
    work = np.empty((2, grid.nx))
    residuals = []
    max_cfl = 0.0
    converged = False
    k = 0
    for k in range(max_iter):
        c = _kernels.hj_backward_kernel(mbar, theta, terminal(mbar[-1]), grid.times, grid.dx, U)
        _check_cfl(c, grid, "hj_backward")
        lam = 1.0 if picard else 2.0 / (k + 2.0)
        c2, change = _kernels.transport_average_kernel(m0, U, grid.times, grid.dx, mbar, lam,
                                                       work)
        _check_cfl(c2, grid, "transport_forward")
        max_cfl = max(max_cfl, c, c2)
        residuals.append(change)
        if change <= tol:
            converged = True
            break
    # final best response to the averaged density
    c = _kernels.hj_backward_kernel(mbar, theta, terminal(mbar[-1]), grid.times, grid.dx, U)
    _check_cfl(c, grid, "hj_backward")
    c2, _ = _kernels.transport_average_kernel(m0, U, grid.times, grid.dx, mbar, 1.0, work)
    _check_cfl(c2, grid, "transport_forward")
    return U, mbar, residuals, converged, k + 1, max(max_cfl, c, c2)


# ---------------------------------------------------------------- public solvers


def solve_terminal_cost(m0, params: Params, grid: Grid, tol: float = 1e-10,
                        max_iter: int = 50, method: str = "lagrangian",
                        datum: InitialDatum | None = None, n_cells: int | None = None,
                        picard: bool = False, initial_guess: np.ndarray | None = None):
    """Solve the terminal-cost problem u(., t1) = kappa_T t1 m(., t1)^theta.

    Returns (u, m, report).  ``datum`` optionally describes m0 exactly (its
    cell averages must be ``m0``); otherwise the cumulative mass of m0 is
    reconstructed.  With ``method="fictitious_play"`` the explicit scheme is
    iterated instead, with plain Picard updates when ``picard`` is set.
    """
    m0 = np.ascontiguousarray(m0, dtype=float)
    _check_initial(m0, grid)
    if method == "lagrangian":
        sol, hist, conv, wall = _solve_lagrangian(m0, params, grid, tol, max_iter, datum,
                                                  n_cells)
        u, m, steps = _fields_from_lagrangian(sol, grid, lambda x: np.zeros_like(x))
        report = SolveReport(len(hist), hist, conv, wall, "lagrangian", 0.5,
                             extras={"n_cells": len(sol.w), "hj_substeps": int(steps)},
                             lagrangian=sol)
        return u, m, report
    if method != "fictitious_play":
        raise ConfigurationError(f"unknown method {method!r}")
    start = time.perf_counter()
    if datum is None:
        datum = datum_from_array(m0, grid, params.theta)
    guess = _warm_start(datum, params, grid) if initial_guess is None else initial_guess
    cT = params.kappa_T * grid.t1
    theta = float(params.theta)
    U, mbar, res, conv, it, cfl = _fictitious_play(
        m0, params, grid, tol, max_iter, picard, lambda mT: cT * mT**theta, guess)
    report = SolveReport(it, res, conv, time.perf_counter() - start, "fictitious_play", cfl)
    return Field(U, grid, Kind.VALUE), Field(mbar, grid, Kind.DENSITY), report


def normalize_planning_value(u: np.ndarray, m: np.ndarray, grid: Grid) -> np.ndarray:
    """Shift u so that the integral of u m at the middle of the window vanishes."""
    tm = 0.5 * (grid.t0 + grid.t1)
    ut = Field(u, grid, Kind.VALUE).at(tm)
    mt = Field(m, grid, Kind.DENSITY).at(tm)
    shift = np.sum(ut * mt) / np.sum(mt)
    return u - shift


def solve_planning(m0, mT, params: Params, grid: Grid, tol: float = 1e-10,
                   max_iter: int = 50, method: str = "lagrangian",
                   datum: InitialDatum | None = None, datum_T: InitialDatum | None = None,
                   n_cells: int | None = None, sigma: float | None = None,
                   inner_iter: int = 20, picard: bool = False):
    """Solve the planning problem m(., t0) = m0, m(., t1) = mT.

    The value function is normalised so that the integral of u m vanishes at
    the middle of the window.  The Lagrangian method imposes the terminal
    density through the terminal node positions; ``fictitious_play`` runs
    dual ascent on a terminal potential around the explicit scheme.
    """
    m0 = np.ascontiguousarray(m0, dtype=float)
    mT = np.ascontiguousarray(mT, dtype=float)
    _check_initial(m0, grid)
    _check_initial(mT, grid)
    M0, MT = m0.sum() * grid.dx, mT.sum() * grid.dx
    if abs(M0 - MT) > 1e-10 * max(M0, MT):
        raise DomainError(
            f"compatibility condition violated: total masses differ ({M0!r} vs {MT!r})"
        )
    if method == "lagrangian":
        sol, hist, conv, wall = _solve_lagrangian(m0, params, grid, tol, max_iter, datum,
                                                  n_cells, mT=mT, datum_T=datum_T)
        left, right = sol.u[-1, 0], sol.u[-1, -1]
        xl, xr = sol.X[-1, 0], sol.X[-1, -1]

        def exterior(x):
            return np.where(x < xl, left, right)

        u, m, steps = _fields_from_lagrangian(sol, grid, exterior)
        gap = float(np.abs(m.values[-1] - mT).sum() * grid.dx)
        uv = normalize_planning_value(u.values, m.values, grid)
        shift = float(u.values[0, 0] - uv[0, 0])
        sol = LagrangianSolution(sol.X, sol.w, sol.times, sol.u - shift, sol.velocity)
        report = SolveReport(len(hist), hist, conv, wall, "lagrangian", 0.5, gap,
                             extras={"n_cells": len(sol.w), "hj_substeps": int(steps)},
                             lagrangian=sol)
        return Field(uv, grid, Kind.VALUE), m, report
    if method != "fictitious_play":
        raise ConfigurationError(f"unknown method {method!r}")
    return _planning_dual_ascent(m0, mT, params, grid, tol, max_iter, datum, sigma,
                                 inner_iter, picard)


def _planning_dual_ascent(m0, mT, params, grid, tol, max_iter, datum, sigma, inner_iter,
                          picard):
    # psi <- psi + sigma (m(., t1) - mT), sigma halved whenever the gap grows
    start = time.perf_counter()
    if datum is None:
        datum = datum_from_array(m0, grid, params.theta)
    sigma = 0.5 * grid.dx if sigma is None else sigma
    mbar = _warm_start(datum, params, grid)
    psi = np.zeros(grid.nx)
    gaps = []
    converged = False
    max_cfl = 0.0
    U = None
    for _ in range(max_iter):
        U, mbar, _, _, _, cfl = _fictitious_play(
            m0, params, grid, 0.0, inner_iter, picard, lambda _m: psi, mbar)
        max_cfl = max(max_cfl, cfl)
        gap = float(np.abs(mbar[-1] - mT).sum() * grid.dx)
        if gaps and gap > gaps[-1]:
            sigma *= 0.5
        gaps.append(gap)
        if gap <= tol:
            converged = True
            break
        psi = psi + sigma * (mbar[-1] - mT)
    uv = normalize_planning_value(U, mbar, grid)
    report = SolveReport(len(gaps), gaps, converged, time.perf_counter() - start,
                         "fictitious_play", max_cfl, gaps[-1])
    return Field(uv, grid, Kind.VALUE), Field(mbar, grid, Kind.DENSITY), report
