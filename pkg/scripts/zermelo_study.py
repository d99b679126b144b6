"""Zermelo desensitization study.

Solves the crossing problem over a weight sweep and writes

* ``zermelo_paths.csv``: t, x1, x2, mu and heading for every weight,
* ``zermelo_tradeoff.csv``: weight, J, Jc, int mu^2 and max x2,
* ``zermelo_mc.csv``: x1(tf), x2(tf) per draw for the smallest and largest weight.

Usage: ``python scripts/zermelo_study.py [--out DIR] [--draws 100] [--seed 0]``
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from cdoc import evaluate_dispersion, get_problem, sample_parameters, sweep_weights
from cdoc.problems import default_fraction

WEIGHTS = [0.0, 1.0, 100.0, 1000.0, 1e4]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/zermelo")
    ap.add_argument("--draws", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    prob = get_problem("zermelo")
    curve = sweep_weights(prob, WEIGHTS)
    with open(out / "zermelo_paths.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["weight", "t", "x1", "x2", "mu", "u"])
        for a, sol in curve.solutions.items():
            x, mu = sol.part("x"), sol.part("mu")
            for k, t in enumerate(sol.grid.nodes):
                w.writerow([a, t, x[k, 0], x[k, 1], mu[k, 0], sol.u.values[k, 0]])
    with open(out / "zermelo_tradeoff.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["weight", "J", "Jc", "mu2_integral", "max_x2", "converged"])
        for a, sol in curve.solutions.items():
            pt = next((p for p in curve.points if p.weight == a), None)
            w.writerow([a, sol.J, sol.Jc, pt.sensitivity if pt else "", float(np.max(sol.part("x")[:, 1])),
                        sol.converged])

    draws = sample_parameters(prob.p0, default_fraction("zermelo"), args.draws, args.seed)
    ends = (WEIGHTS[0], WEIGHTS[-1])
    stats = {a: evaluate_dispersion(prob, curve.solutions[a].u_solved, draws) for a in ends}
    with open(out / "zermelo_mc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["draw", "p"] + [f"{k}_alpha{a:g}" for a in ends for k in ("x1f", "x2f")])
        for i, p in enumerate(draws[:, 0]):
            w.writerow([i, p] + [v for a in ends for v in stats[a].final_states[i]])
    for a in ends:
        print(f"alpha={a:g}: std x1(tf) = {stats[a].final_state_std[0]:.4e}, J = {curve.solutions[a].J:.5f}")
    print(f"wrote {out}/zermelo_*.csv")


if __name__ == "__main__":
    main()
