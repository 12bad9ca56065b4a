"""Shared, cached runs.  Large runs are built once per session."""

from functools import lru_cache

import numpy as np
import pytest

from mfgasym.profiles import Params, alpha_of, make_profile
from mfgasym.solver import build_grid, bump_datum, self_similar_datum, solve_terminal_cost


@lru_cache(maxsize=None)
def self_similar_run(theta=2.0, nx=2048, t0=1.0, t1=10.0, cfl=0.9):
    """Terminal-cost run started on the self-similar density at t0 (absolute time)."""
    prof = make_profile(1.0, theta)
    P = Params(theta=theta, mass=1.0, horizon=t1 - t0, kappa_T=1.0 / (1.0 - prof.alpha))
    d = self_similar_datum(prof, t0)
    g = build_grid(P, (d.a, d.b), nx, t0=t0, cfl=cfl)
    u, m, rep = solve_terminal_cost(d.cell_averages(g), P, g, datum=d)
    return prof, P, d, g, u, m, rep


@lru_cache(maxsize=None)
def bump_run(theta, nx, horizon, cfl=0.9, half_width=None):
    """Terminal-cost run from the unit-mass bump on (-1, 1), c_T = kappa_T T."""
    P = Params(theta=theta, mass=1.0, horizon=horizon, kappa_T=1.0 / (1.0 - alpha_of(theta)))
    d = bump_datum(-1.0, 1.0, 1.0, theta)
    g = build_grid(P, (-1.0, 1.0), nx, cfl=cfl, half_width=half_width)
    u, m, rep = solve_terminal_cost(d.cell_averages(g), P, g, datum=d)
    return P, d, g, u, m, rep


@pytest.fixture(scope="session")
def ss2():
    return self_similar_run()


def l1_error_to_profile(m, g, prof):
    from mfgasym.profiles import self_similar_cell_averages

    return np.array([np.sum(np.abs(m.values[n] - self_similar_cell_averages(g.edges, t, prof)))
                     * g.dx for n, t in enumerate(g.times)])


def exact_fields(theta, t0, t1, nx, n, shift=0.0, half_width=None, clamp_u=False):
    """Self-similar (u, m) at t + shift on geometric levels, m as exact cell averages.

    With ``clamp_u`` the value is held constant outside the support instead of
    continuing the interior formula, which keeps |u_x| bounded by the edge speed.
    """
    from mfgasym.profiles import eval_self_similar, self_similar_cell_averages
    from mfgasym.solver import Field, Grid

    prof = make_profile(1.0, theta)
    L = 3.0 * (1.0 + t1**prof.alpha) if half_width is None else half_width
    ts = t0 * (t1 / t0) ** (np.arange(n + 1) / n)
    g = Grid(-L, L, nx, t0, t1, n, ts)
    M = np.array([self_similar_cell_averages(g.edges, t + shift, prof) for t in ts])
    U = np.empty_like(M)
    for k, t in enumerate(ts):
        x = g.x
        if clamp_u:
            h = float(prof.edge(t + shift))
            x = np.clip(x, -h, h)
        U[k] = eval_self_similar(x, t + shift, prof, extend=True)[1]
    return prof, g, Field(U, g, "value"), Field(M, g, "density")
