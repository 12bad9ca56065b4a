"""Classify optimal trajectories started outside the support.

Runs the self-similar terminal-cost problem on t in [1, 10] and probes three
points per start time: far left of the terminal edge, between the edge and
its tangent line, and close to the current edge.
"""

import argparse

from mfgasym.lagrangian import check_vanishing_trajectories, extract_free_boundary
from mfgasym.profiles import Params, make_profile
from mfgasym.solver import build_grid, self_similar_datum, solve_terminal_cost


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nx", type=int, default=2048)
    args = ap.parse_args()
    prof = make_profile(1.0, 2.0)
    P = Params(theta=2.0, horizon=9.0, kappa_T=2.0)
    d = self_similar_datum(prof, 1.0)
    g = build_grid(P, (d.a, d.b), args.nx, t0=1.0, cfl=0.9)
    u, m, _ = solve_terminal_cost(d.cell_averages(g), P, g, datum=d)
    fb = extract_free_boundary(m, 2.0)
    gT, _, dgT, _ = fb.at(g.t1)
    probes = []
    for t in (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0):
        gl = fb.at(t)[0]
        line = gT + dgT * (t - g.t1)
        probes += [(gT - 1.0, t), (0.5 * (gT + line), t), (gl - 0.2 * (gl - line), t)]
    rep = check_vanishing_trajectories(u, fb, probes)
    print(f"{'x':>8} {'t':>5} {'case':>4} {'expected':>8} {'contact':>8} {'residual':>9}")
    for p in rep.probes:
        ct = f"{p.contact_time:8.3f}" if p.contact_time is not None else "       -"
        print(f"{p.x:8.4f} {p.t:5.2f} {p.case!s:>4} {p.expected_case:8d} {ct} "
              f"{p.linearity_residual:9.2e}")
    print(f"all match: {rep.all_match_expected}, max residual "
          f"{rep.max_linearity_residual:.2e} (tolerance {rep.tolerance:.2e}), "
          f"gradient bound: {rep.bound_holds}")


if __name__ == "__main__":
    main()
