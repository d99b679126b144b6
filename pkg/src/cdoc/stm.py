"""State-transition (sensitivity) matrices along a stored trajectory, and the
check that ``S(t|t')^T lam(t)`` is the gradient of the cost-to-go at ``t``
with respect to the state at an earlier node ``t'``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ControlSignal,
    IntegrationDiverged,
    ProblemDef,
    TimeGrid,
    Trajectory,
    integrate_from,
    interval_samples,
    running_increments,
)

MAX_CONDITION = 1e12


class IllConditioned(np.linalg.LinAlgError):
    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(f"transition matrix condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}")


@dataclass(frozen=True, eq=False)
class StmTrajectory:
    grid: TimeGrid
    mats: np.ndarray
    augmented: bool = False

    def at(self, t: float) -> np.ndarray:
        return self.mats[self.grid.index_of(t)]


def _jacobians(prob: ProblemDef, x, p, u, t, augmented: bool) -> np.ndarray:
    fx = prob.f_x(x, p, u, t)
    if not augmented:
        return fx
    fp = prob.f_p(x, p, u, t)
    batch = fx.shape[:-2]
    d = prob.n + prob.l
    A = np.zeros(batch + (d, d))
    A[..., : prob.n, : prob.n] = fx
    A[..., : prob.n, prob.n:] = fp
    return A


def segment_jacobians(prob: ProblemDef, traj: Trajectory, u: ControlSignal, p=None, augmented=False):
    """State Jacobians at the left, midpoint and right sample of every interval."""
    p = _params(prob, traj, p)
    s = interval_samples(prob, traj.states[:, : prob.n], p, u, traj.grid.nodes)
    return s, tuple(
        _jacobians(prob, x, p, uu, t, augmented) for x, uu, t in zip(s["x"], s["u"], s["t"])
    )


def _params(prob, traj, p):
    if p is not None:
        return np.asarray(p, dtype=float).reshape(-1)
    return prob.p0 if traj.params is None else traj.params


def propagate_stm(
    prob: ProblemDef, traj: Trajectory, u: ControlSignal, p=None, augmented: bool = False
) -> StmTrajectory:
    """Integrate ``S' = A(t) S``, ``S(t0) = I`` with RK4 along the stored trajectory.

    ``A`` is ``f_x`` or, with ``augmented=True``, ``[[f_x, f_p], [0, 0]]``.
    """
    s, (Al, Am, Ar) = segment_jacobians(prob, traj, u, p, augmented)
    h = s["h"]
    d = Al.shape[-1]
    mats = np.empty((traj.grid.N, d, d))
    S = np.eye(d)
    mats[0] = S
    for i in range(h.size):
        k1 = Al[i] @ S
        k2 = Am[i] @ (S + 0.5 * h[i] * k1)
        k3 = Am[i] @ (S + 0.5 * h[i] * k2)
        k4 = Ar[i] @ (S + h[i] * k3)
        S = S + (h[i] / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(S)):
            raise IntegrationDiverged(i + 1, "transition matrix")
        mats[i + 1] = S
    mats.setflags(write=False)
    return StmTrajectory(traj.grid, mats, augmented)


def stm_between(stms: StmTrajectory, t_from: float, t_to: float) -> np.ndarray:
    """``S(t_to | t_from) = S(t_to | t0) S(t_from | t0)^{-1}``."""
    S_from = stms.at(t_from)
    S_to = stms.at(t_to)
    cond = float(np.linalg.cond(S_from))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditioned(cond)
    return np.linalg.solve(S_from.T, S_to.T).T


@dataclass
class RelationReport:
    pairs: list
    errors: list
    tol: float
    details: list = field(default_factory=list)

    @property
    def worst(self) -> float:
        return max(self.errors, default=0.0)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors)

    @property
    def failures(self) -> list:
        return [pr for pr, e in zip(self.pairs, self.errors) if e > self.tol]


def fd_cost_to_go_wrt_earlier_state(
    prob: ProblemDef, traj: Trajectory, u: ControlSignal, i_from: int, i_to: int, h=None, p=None
) -> np.ndarray:
    """Central-difference gradient of ``C(x(t), u, t)`` with respect to ``x(t')``.

    ``t' = nodes[i_from] <= t = nodes[i_to]``; each perturbed trajectory is
    re-integrated from ``t'`` under the unchanged control.
    """
    p = _params(prob, traj, p)
    n = prob.n
    x_from = traj.states[i_from, :n]
    steps = 1e-4 * (1.0 + np.abs(x_from)) if h is None else np.full(n, float(h))
    starts = np.repeat(x_from[None], 2 * n, axis=0)
    for i in range(n):
        starts[2 * i, i] += steps[i]
        starts[2 * i + 1, i] -= steps[i]
    tail = np.swapaxes(integrate_from(prob, starts, p, u, i_from), 0, 1)
    nodes = u.grid.nodes[i_from:]
    inc = running_increments(prob, tail, p, u, nodes)
    k = i_to - i_from
    C = np.array([prob.phi(tail[b, -1], prob.tf) for b in range(2 * n)]) + inc[:, k:].sum(axis=-1)
    return (C[0::2] - C[1::2]) / (2 * steps)


def verify_costate_stm_relation(
    prob: ProblemDef,
    traj: Trajectory,
    u: ControlSignal,
    costates,
    stms: StmTrajectory,
    tol: float = 1e-3,
    pairs=None,
    n_pairs: int = 3,
    seed: int = 0,
    h=None,
) -> RelationReport:
    """Check ``S(t|t')^T lam(t) = [dC(x(t),u,t)/dx(t')]^T`` at node pairs.

    ``pairs`` are ``(t', t)`` time pairs with ``t' <= t``; by default
    ``n_pairs`` random interior pairs are drawn with ``seed``.  The error is
    ``|lhs - fd| / (1 + |fd|)`` in the max norm.
    """
    grid = traj.grid
    if pairs is None:
        rng = np.random.default_rng(seed)
        idx = []
        while len(idx) < n_pairs:
            a, b = sorted(rng.integers(0, grid.N - 1, size=2))
            if (a, b) not in idx:
                idx.append((int(a), int(b)))
    else:
        idx = [(grid.index_of(a), grid.index_of(b)) for a, b in pairs]
    n = prob.n
    errors, details, times = [], [], []
    for a, b in idx:
        if a > b:
            raise ValueError("pairs must satisfy t' <= t")
        S = stm_between(stms, grid.nodes[a], grid.nodes[b])[:n, :n]
        lhs = S.T @ costates.lambdas[b]
        fd = fd_cost_to_go_wrt_earlier_state(prob, traj, u, a, b, h=h)
        err = float(np.max(np.abs(lhs - fd)) / (1.0 + np.max(np.abs(fd))))
        errors.append(err)
        times.append((float(grid.nodes[a]), float(grid.nodes[b])))
        details.append({"t_from": times[-1][0], "t_to": times[-1][1],
                        "propagated": lhs.tolist(), "finite_difference": fd.tolist()})
    return RelationReport(times, errors, tol, details)
