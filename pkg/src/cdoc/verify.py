"""Executable verification suites for a problem.

``theorem1``
    Backward co-states against finite-difference gradients of the
    cost-to-go, for every probe control of the problem.
``stm``
    The transition-matrix relation ``S(t|t')^T lam(t) = dC/dx(t')`` at node
    pairs, and the transition-matrix integral form of ``lam`` against the
    backward sweep.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .adjoint import cx_integral_form, propagate_costates, verify_theorem1
from .core import ProblemDef, TimeGrid, integrate
from .stm import propagate_stm, verify_costate_stm_relation

SUITES = ("theorem1", "stm", "all")
THEOREM1_TOL = 1e-3
RELATION_TOL = 1e-3
INTEGRAL_FORM_TOL = 1e-6


def probe_controls(prob: ProblemDef, grid: TimeGrid) -> list:
    factory = prob.meta.get("probe_controls")
    if factory is None:
        raise ValueError(f"problem {prob.name!r} ships no probe controls")
    return factory(grid)


def integral_form_gap(prob: ProblemDef, grid: TimeGrid) -> float:
    """Worst relative gap between the integral-form and backward-sweep co-states."""
    worst = 0.0
    for u in probe_controls(prob, grid):
        traj = integrate(prob, prob.x0, u)
        lam = propagate_costates(prob, traj, u).lambdas
        cx = cx_integral_form(prob, traj, u)
        worst = max(worst, float(np.max(np.abs(cx - lam)) / (1.0 + np.max(np.abs(lam)))))
    return worst


def run_theorem1(prob: ProblemDef, N: int = 1001, h: float = 1e-4, n_nodes: int = 5) -> dict:
    grid = prob.grid(N)
    rep = verify_theorem1(prob, probe_controls(prob, grid), tol=THEOREM1_TOL, n_nodes=n_nodes, h=h)
    return {
        "tolerance": THEOREM1_TOL,
        "controls": len(probe_controls(prob, grid)),
        "nodes_per_control": n_nodes,
        "worst_lambda_error": rep.worst_lambda,
        "worst_mu_error": rep.worst_mu,
        "passed": rep.passed,
    }


def run_stm(prob: ProblemDef, N: int = 1001, h: float = 1e-4, n_pairs: int = 3, seed: int = 0) -> dict:
    grid = prob.grid(N)
    worst_rel, passed = 0.0, True
    for u in probe_controls(prob, grid):
        traj = integrate(prob, prob.x0, u)
        co = propagate_costates(prob, traj, u)
        stms = propagate_stm(prob, traj, u)
        rep = verify_costate_stm_relation(prob, traj, u, co, stms, tol=RELATION_TOL,
                                          n_pairs=n_pairs, seed=seed, h=h)
        worst_rel = max(worst_rel, rep.worst)
        passed = passed and rep.passed
    gap = integral_form_gap(prob, grid)
    return {
        "relation_tolerance": RELATION_TOL,
        "pairs_per_control": n_pairs,
        "worst_relation_error": worst_rel,
        "integral_form_tolerance": INTEGRAL_FORM_TOL,
        "worst_integral_form_error": gap,
        "passed": bool(passed and gap <= INTEGRAL_FORM_TOL),
    }


def run_suite(prob: ProblemDef, suite: str = "all", N: int = 1001, h: float = 1e-4,
              seed: int = 0, n_nodes: int = 5, n_pairs: int = 3) -> dict:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    out: dict = {}
    if suite in ("theorem1", "all"):
        out["theorem1"] = run_theorem1(prob, N, h, n_nodes)
    if suite in ("stm", "all"):
        out["stm"] = run_stm(prob, N, h, n_pairs, seed)
    out["passed"] = all(v["passed"] for v in out.values())
    return out
