"""Scalar LQR desensitization study over the four uncertainty regimes.

For each regime the Q = 0 and Q = 1000 solutions are computed and re-simulated
open loop under the same seeded draws.  Writes ``lqr_<case>_paths.csv`` (t, x,
u, mu for both weights), ``lqr_<case>_mc.csv`` (per-draw costs) and a
``lqr_summary.csv`` with nominal cost, cost std and spread.

Usage: ``python scripts/lqr_study.py [--out DIR] [--draws 100] [--seed 0]``
"""

import argparse
import csv
from pathlib import Path

from cdoc import WeightSchedule, evaluate_dispersion, get_problem, sample_parameters, solve_cdoc
from cdoc.problems import default_fraction

CASES = ["lqr-b", "lqr-a-stable", "lqr-a-unstable", "lqr-a-marginal"]
WEIGHTS = (0.0, 1000.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/lqr")
    ap.add_argument("--draws", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    summary = []
    for case in CASES:
        prob = get_problem(case)
        sols = {q: solve_cdoc(prob, WeightSchedule.constant([q])) for q in WEIGHTS}
        draws = sample_parameters(prob.p0, default_fraction(case), args.draws, args.seed)
        stats = {q: evaluate_dispersion(prob, s.u_solved, draws) for q, s in sols.items()}
        with open(out / f"{case}_paths.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"{k}_Q{q:g}" for q in WEIGHTS for k in ("x", "u", "mu")])
            grid = sols[0.0].grid.nodes
            for k, t in enumerate(grid):
                w.writerow([t] + [v for q in WEIGHTS for v in (
                    sols[q].part("x")[k, 0], sols[q].u.values[k, 0], sols[q].part("mu")[k, 0])])
        with open(out / f"{case}_mc.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["draw", "p"] + [f"cost_Q{q:g}" for q in WEIGHTS])
            for i, p in enumerate(draws[:, 0]):
                w.writerow([i, p] + [stats[q].costs[i] for q in WEIGHTS])
        for q in WEIGHTS:
            st = stats[q]
            summary.append([case, q, sols[q].converged, st.nominal_cost, st.std, st.spread, st.excluded])
            print(f"{case:15s} Q={q:6g} nominal={st.nominal_cost:.5f} std={st.std:.4e} "
                  f"spread={st.spread:.4e} diverged={st.excluded}")
    with open(out / "lqr_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "Q", "converged", "nominal_cost", "cost_std", "cost_spread", "diverged"])
        w.writerows(summary)
    print(f"wrote {out}/")


if __name__ == "__main__":
    main()
