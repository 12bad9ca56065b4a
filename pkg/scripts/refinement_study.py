"""Grid refinement on the self-similar terminal-cost run (t in [1, 10]).

Prints max_t L1 distance to the exact density, the ratio between successive
grids and the wall time of each solve.
"""

import argparse
import time

import numpy as np

from mfgasym.profiles import Params, make_profile, self_similar_cell_averages
from mfgasym.solver import build_grid, self_similar_datum, solve_terminal_cost


def l1_error(theta, nx, t0=1.0, t1=10.0):
    prof = make_profile(1.0, theta)
    P = Params(theta=theta, horizon=t1 - t0, kappa_T=1.0 / (1.0 - prof.alpha))
    d = self_similar_datum(prof, t0)
    g = build_grid(P, (d.a, d.b), nx, t0=t0, cfl=0.9)
    start = time.perf_counter()
    u, m, rep = solve_terminal_cost(d.cell_averages(g), P, g, datum=d)
    wall = time.perf_counter() - start
    err = max(np.sum(np.abs(m.values[n] - self_similar_cell_averages(g.edges, t, prof))) * g.dx
              for n, t in enumerate(g.times))
    return err, wall, rep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--theta", type=float, default=2.0)
    ap.add_argument("--nx", type=int, nargs="+", default=[512, 1024, 2048, 4096])
    args = ap.parse_args()
    prev = None
    print(f"{'nx':>6} {'L1':>10} {'ratio':>6} {'iters':>5} {'wall s':>7}")
    for nx in args.nx:
        err, wall, rep = l1_error(args.theta, nx)
        ratio = f"{prev / err:6.2f}" if prev else "     -"
        print(f"{nx:6d} {err:10.3e} {ratio} {rep.iterations:5d} {wall:7.1f}")
        prev = err


if __name__ == "__main__":
    main()
