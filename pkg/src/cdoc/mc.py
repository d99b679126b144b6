"""Monte-Carlo dispersion of a fixed open-loop control under constant
parameter perturbations, and empirical trade-off curves from weight sweeps.

Parameter draws come from numpy's Philox4x32-10 counter-based generator keyed
by the seed: draw ``i``, component ``j`` is built from the ``(i * l + j)``-th
double of that stream, so a draw set is a pure function of
``(p0, fraction, n, seed)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .augment import WeightSchedule, build_augmented, sensitivity_cost
from .core import ControlSignal, IntegrationDiverged, ProblemDef, eval_cost, integrate
from .solver import DesensitizedSolution, SolverOptions, solve_cdoc

log = logging.getLogger(__name__)

PARETO_SLACK = 1e-4


def sample_parameters(p0, fraction: float, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. uniform draws around ``p0``, shape ``(n, l)``.

    Component ``i`` is uniform on ``[(1 - fraction) p0_i, (1 + fraction) p0_i]``
    (endpoints ordered for negative ``p0_i``), or on ``[-fraction, fraction]``
    when ``p0_i = 0``.  ``fraction = 0`` returns ``p0`` exactly.
    """
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    if n < 1:
        raise ValueError("need at least one draw")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    unit = rng.random((n, p0.size))
    a = np.where(p0 == 0.0, -fraction, (1.0 - fraction) * p0)
    b = np.where(p0 == 0.0, fraction, (1.0 + fraction) * p0)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return lo + (hi - lo) * unit


@dataclass
class DispersionStats:
    """Per-draw outcomes of an open-loop control and their summary.

    Diverged draws keep NaN costs, final states and trajectories and are
    left out of the moments; ``excluded`` counts them.
    """

    draws: np.ndarray
    costs: np.ndarray
    final_states: np.ndarray
    trajectories: np.ndarray
    diverged: np.ndarray
    nominal_cost: float
    times: np.ndarray

    @property
    def samples(self) -> int:
        return int(self.draws.shape[0])

    @property
    def excluded(self) -> int:
        return int(np.count_nonzero(self.diverged))

    def _ok(self, values):
        return values[~self.diverged]

    @property
    def mean(self) -> float:
        return _moment(np.mean, self._ok(self.costs))

    @property
    def std(self) -> float:
        return _moment(_std, self._ok(self.costs))

    @property
    def min(self) -> float:
        return _moment(np.min, self._ok(self.costs))

    @property
    def max(self) -> float:
        return _moment(np.max, self._ok(self.costs))

    @property
    def spread(self) -> float:
        return self.max - self.min

    @property
    def final_state_std(self) -> np.ndarray:
        ok = self._ok(self.final_states)
        return _std(ok, axis=0) if ok.size else np.full(self.final_states.shape[1], np.nan)

    @property
    def final_state_mean(self) -> np.ndarray:
        ok = self._ok(self.final_states)
        return np.mean(ok, axis=0) if ok.size else np.full(self.final_states.shape[1], np.nan)

    def summary(self) -> dict:
        return {
            "samples": self.samples,
            "excluded": self.excluded,
            "nominal_cost": self.nominal_cost,
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "final_state_mean": self.final_state_mean.tolist(),
            "final_state_std": self.final_state_std.tolist(),
        }


def _std(values, axis=None):
    # shifting by one sample first makes identical samples give exactly zero
    values = np.asarray(values)
    ref = values[:1] if axis == 0 else values.flat[0]
    return np.std(values - ref, axis=axis)


def _moment(fn, values) -> float:
    return float(fn(values)) if values.size else float("nan")


def evaluate_dispersion(prob: ProblemDef, u: ControlSignal, draws) -> DispersionStats:
    """Re-simulate ``u`` open loop for every parameter draw and collect the costs.

    A draw whose integration blows up, or whose cost is not finite, is
    recorded as diverged rather than raised.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[1] != prob.l:
        draws = draws.reshape(-1, prob.l)
    count = draws.shape[0]
    N = u.grid.N
    costs = np.full(count, np.nan)
    finals = np.full((count, prob.n), np.nan)
    trajs = np.full((count, N, prob.n), np.nan)
    diverged = np.zeros(count, dtype=bool)
    for i, p in enumerate(draws):
        try:
            traj = integrate(prob, prob.x0, u, p=p)
            with np.errstate(over="ignore", invalid="ignore"):
                cost = eval_cost(prob, traj, u)
        except IntegrationDiverged:
            diverged[i] = True
            continue
        if not np.isfinite(cost):
            diverged[i] = True
            continue
        costs[i] = cost
        finals[i] = traj.final
        trajs[i] = traj.states
    if diverged.any():
        log.info("%d of %d draws diverged and are excluded", int(diverged.sum()), count)
    nominal = eval_cost(prob, integrate(prob, prob.x0, u), u)
    return DispersionStats(draws, costs, finals, trajs, diverged, float(nominal), u.grid.nodes.copy())


@dataclass
class TradeoffPoint:
    weight: float
    J: float
    Jc: float
    sensitivity: float
    converged: bool


@dataclass
class TradeoffCurve:
    """Converged ``(weight, J, Jc)`` points in ascending weight order.

    ``sensitivity`` is the unweighted integral ``int mu^T D mu dt`` for the
    sweep direction ``D``; it is the quantity the Pareto ordering refers to,
    since the weighted ``Jc`` vanishes at weight zero.
    """

    points: list
    failed: list = field(default_factory=list)
    direction: Optional[np.ndarray] = None
    solutions: dict = field(default_factory=dict, repr=False)

    @property
    def weights(self) -> list:
        return [pt.weight for pt in self.points]

    def pareto_violations(self, slack: float = PARETO_SLACK) -> list:
        """Adjacent pairs that break ``J`` non-decreasing or sensitivity non-increasing."""
        bad = []
        for a, b in zip(self.points, self.points[1:]):
            if b.J < a.J - slack * (1.0 + abs(a.J)):
                bad.append((a.weight, b.weight, "J"))
            if b.sensitivity > a.sensitivity + slack * (1.0 + abs(a.sensitivity)):
                bad.append((a.weight, b.weight, "sensitivity"))
        return bad

    @property
    def pareto_ordered(self) -> bool:
        return not self.pareto_violations()


def sensitivity_integral(prob: ProblemDef, sol: DesensitizedSolution, direction) -> float:
    aug = build_augmented(prob, WeightSchedule.constant(direction))
    return sensitivity_cost(aug, sol.z, sol.u_solved)


def sweep_weights(
    prob: ProblemDef,
    weights: Sequence[float],
    opts: Optional[SolverOptions] = None,
    direction=None,
) -> TradeoffCurve:
    """Solve at ``Q = w * diag(direction)`` for every weight (ascending, non-negative).

    ``direction`` defaults to ones.  Non-converged solves are listed in
    ``failed`` and left off the curve; a Pareto-ordering violation among the
    converged points is logged as a warning.
    """
    weights = [float(w) for w in weights]
    if not weights:
        raise ValueError("weight list is empty")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be non-negative")
    if any(b <= a for a, b in zip(weights, weights[1:])):
        raise ValueError("weights must be strictly ascending")
    D = np.ones(prob.l) if direction is None else np.asarray(direction, dtype=float).reshape(prob.l)
    if np.any(D < 0) or not np.any(D > 0):
        raise ValueError("direction must be non-negative and not all zero")
    points, failed, sols = [], [], {}
    for w in weights:
        sol = solve_cdoc(prob, WeightSchedule.constant(w * D), opts)
        sols[w] = sol
        if not sol.converged:
            log.warning("weight %g did not converge (%s)", w, sol.status)
            failed.append(w)
            continue
        points.append(TradeoffPoint(w, sol.J, sol.Jc, sensitivity_integral(prob, sol, D), True))
    curve = TradeoffCurve(points, failed, D, sols)
    if not curve.pareto_ordered:
        log.warning("trade-off curve is not Pareto ordered: %s", curve.pareto_violations())
    return curve
