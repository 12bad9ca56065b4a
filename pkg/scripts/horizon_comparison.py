"""Compare terminal-cost runs with horizons T and 2T on an early window.

Both runs share the x-domain of the longer horizon and start from the same
bump.  For theta > 2 the early dynamics should not depend on T.
"""

import argparse

import numpy as np

from mfgasym.profiles import Params, alpha_of
from mfgasym.solver import build_grid, bump_datum, solve_terminal_cost


def run(theta, nx, horizon, half_width):
    P = Params(theta=theta, horizon=horizon, kappa_T=1.0 / (1.0 - alpha_of(theta)))
    d = bump_datum(-1.0, 1.0, 1.0, theta)
    g = build_grid(P, (-1.0, 1.0), nx, cfl=0.9, half_width=half_width)
    u, m, _ = solve_terminal_cost(d.cell_averages(g), P, g, datum=d)
    return g, u, m


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--theta", type=float, default=4.0)
    ap.add_argument("--nx", type=int, default=4096)
    ap.add_argument("--horizon", type=float, default=50.0)
    ap.add_argument("--window", type=float, default=10.0)
    args = ap.parse_args()
    T = args.horizon
    L = build_grid(Params(theta=args.theta, horizon=2 * T), (-1, 1), args.nx).x_max
    g1, u1, m1 = run(args.theta, args.nx, T, L)
    g2, u2, m2 = run(args.theta, args.nx, 2 * T, L)
    ts = np.union1d(g1.times[g1.times <= args.window], g2.times[g2.times <= args.window])
    dm = [np.sum(np.abs(m1.at(t) - m2.at(t))) * g1.dx for t in ts]
    du = [np.max(np.abs(u1.at(t) - u2.at(t))) for t in ts]
    print(f"theta={args.theta} horizons {T:g} and {2 * T:g}, t in [0, {args.window:g}]")
    print(f"max_t L1 |m_T - m_2T|  = {max(dm):.3e}")
    print(f"sup |u_T - u_2T|       = {max(du):.3e}")


if __name__ == "__main__":
    main()
