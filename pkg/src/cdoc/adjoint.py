"""Backward co-state propagation for a fixed control and the numerical checks
that the co-states are the gradients of the cost-to-go.

Two independent oracles are provided for ``lam(t)``:

* :func:`fd_cost_gradient` differentiates the cost-to-go by re-integrating
  perturbed tails of the trajectory;
* :func:`cx_integral_form` evaluates
  ``C_x(t) = phi_x Gamma(tf, t) + int_t^tf L_x(s) Gamma(s, t) ds`` with the
  transition matrix ``Gamma`` from :mod:`cdoc.stm`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    ControlSignal,
    GridMismatch,
    IntegrationDiverged,
    ProblemDef,
    TimeGrid,
    Trajectory,
    integrate,
    integrate_from,
    interval_samples,
    running_increments,
)
from .stm import IllConditioned, MAX_CONDITION, propagate_stm, segment_jacobians

ADMISSIBILITY_TOL = 1e-6


class AdmissibilityError(ValueError):
    """The control does not meet the terminal constraint at nominal parameters."""


@dataclass(frozen=True, eq=False)
class CostateTrajectory:
    grid: TimeGrid
    lambdas: np.ndarray
    mus: np.ndarray

    def at(self, t: float):
        j = self.grid.index_of(t)
        return self.lambdas[j], self.mus[j]


def _params(prob, traj, p):
    if p is not None:
        return np.asarray(p, dtype=float).reshape(-1)
    return prob.p0 if traj.params is None else traj.params


def propagate_costates(
    prob: ProblemDef, traj: Trajectory, u: ControlSignal, p=None
) -> CostateTrajectory:
    """Integrate the adjoint equations backward from ``lam(tf) = phi_x``, ``mu(tf) = 0``.

    RK4 on the trajectory grid; the state between nodes is the cubic Hermite
    interpolant of the stored forward solution.
    """
    if traj.grid != u.grid:
        raise GridMismatch("trajectory and control must share the grid")
    p = _params(prob, traj, p)
    n, l = prob.n, prob.l
    s = interval_samples(prob, traj.states[:, :n], p, u, traj.grid.nodes)
    h = s["h"]
    fx = [prob.f_x(x, p, uu, t) for x, uu, t in zip(s["x"], s["u"], s["t"])]
    fp = [prob.f_p(x, p, uu, t) for x, uu, t in zip(s["x"], s["u"], s["t"])]
    Lx = [prob.L_x(x, uu, t) for x, uu, t in zip(s["x"], s["u"], s["t"])]

    N = traj.grid.N
    lams = np.empty((N, n))
    mus = np.empty((N, l))
    lam = np.array(prob.phi_x(traj.states[-1, :n], prob.tf), dtype=float).reshape(n)
    mu = np.zeros(l)
    lams[-1], mus[-1] = lam, mu
    # sample index: 0 = left, 1 = mid, 2 = right
    for i in range(N - 2, -1, -1):
        def g(lv, k):
            return -fx[k][i].T @ lv - Lx[k][i], -fp[k][i].T @ lv

        hi = h[i]
        a1, b1 = g(lam, 2)
        a2, b2 = g(lam - 0.5 * hi * a1, 1)
        a3, b3 = g(lam - 0.5 * hi * a2, 1)
        a4, b4 = g(lam - hi * a3, 0)
        lam = lam - (hi / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        mu = mu - (hi / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(mu))):
            raise IntegrationDiverged(i, "co-state")
        lams[i], mus[i] = lam, mu
    lams.setflags(write=False)
    mus.setflags(write=False)
    return CostateTrajectory(traj.grid, lams, mus)


def _tail_costs(prob, tails, p, u, start):
    """Cost-to-go at node ``start`` for a batch of tails ``(B, T, n)``."""
    nodes = u.grid.nodes[start:]
    inc = running_increments(prob, tails, p, u, nodes)
    phi = np.array([prob.phi(tails[b, -1], prob.tf) for b in range(tails.shape[0])])
    return phi + inc.sum(axis=-1)


def fd_cost_gradient(
    prob: ProblemDef,
    u: ControlSignal,
    t: float,
    wrt: str = "state",
    h=None,
    p=None,
    x_init=None,
    traj: Optional[Trajectory] = None,
) -> np.ndarray:
    """Central-difference gradient of the cost-to-go at node ``t``.

    ``wrt="state"`` perturbs ``x(t)``; ``wrt="parameter"`` perturbs ``p`` from
    ``t`` onward with ``x(t)`` held fixed.  Each perturbed tail is
    re-integrated under the same control.  The default step is
    ``1e-4 * (1 + |component|)``.
    """
    p = prob.p0 if p is None else np.asarray(p, dtype=float).reshape(-1)
    if traj is None:
        traj = integrate(prob, prob.x0 if x_init is None else x_init, u, p=p)
    j = u.grid.index_of(t)
    xj = traj.states[j, : prob.n]
    if wrt == "state":
        base, dim = xj, prob.n
    elif wrt == "parameter":
        base, dim = p, prob.l
    else:
        raise ValueError("wrt must be 'state' or 'parameter'")
    steps = 1e-4 * (1.0 + np.abs(base)) if h is None else np.full(dim, float(h))
    if np.any(steps <= 0):
        raise ValueError("finite-difference step must be positive")
    pert = np.repeat(base[None], 2 * dim, axis=0)
    for i in range(dim):
        pert[2 * i, i] += steps[i]
        pert[2 * i + 1, i] -= steps[i]
    if wrt == "state":
        starts, params = pert, p
    else:
        starts, params = np.repeat(xj[None], 2 * dim, axis=0), pert
    try:
        tails = integrate_from(prob, starts, params, u, j)
    except IntegrationDiverged as exc:
        raise IntegrationDiverged(exc.node, f"perturbed {wrt} tail") from exc
    tails = np.swapaxes(tails, 0, 1)
    p_inc = params if wrt == "state" else params[:, None, :]
    C = _tail_costs(prob, tails, p_inc, u, j)
    return (C[0::2] - C[1::2]) / (2 * steps)


def check_admissible(prob: ProblemDef, u: ControlSignal, p=None, tol: float = ADMISSIBILITY_TOL):
    if not prob.k:
        return
    traj = integrate(prob, prob.x0, u, p=p)
    r = prob.terminal_residual(traj.final)
    if np.max(np.abs(r)) > tol:
        raise AdmissibilityError(
            f"terminal constraint residual {np.max(np.abs(r)):.3e} exceeds {tol:.0e}"
        )


@dataclass
class Theorem1Report:
    tol: float
    worst_lambda: float = 0.0
    worst_mu: float = 0.0
    failures: list = field(default_factory=list)
    records: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / (1.0 + np.linalg.norm(a)))


def verify_theorem1(
    prob: ProblemDef,
    controls: Sequence[ControlSignal],
    tol: float = 1e-3,
    n_nodes: int = 5,
    h=None,
    nodes: Optional[Sequence[int]] = None,
) -> Theorem1Report:
    """Compare backward co-states with finite-difference cost-to-go gradients.

    Every control must satisfy the terminal constraint at the nominal
    parameters.  At each checked node the criterion is
    ``|lam - dC/dx| <= tol (1 + |lam|)`` and likewise for ``mu``.
    """
    for u in controls:
        check_admissible(prob, u)
    report = Theorem1Report(tol)
    for ci, u in enumerate(controls):
        N = u.grid.N
        idx = list(nodes) if nodes is not None else [
            int(round(v)) for v in np.linspace(1, N - 2, n_nodes)
        ]
        traj = integrate(prob, prob.x0, u)
        co = propagate_costates(prob, traj, u)
        for j in idx:
            t = float(u.grid.nodes[j])
            g_x = fd_cost_gradient(prob, u, t, "state", h=h, traj=traj)
            g_p = fd_cost_gradient(prob, u, t, "parameter", h=h, traj=traj)
            e_lam = _rel(co.lambdas[j], g_x)
            e_mu = _rel(co.mus[j], g_p)
            report.worst_lambda = max(report.worst_lambda, e_lam)
            report.worst_mu = max(report.worst_mu, e_mu)
            report.records.append({"control": ci, "node": j, "t": t,
                                   "lambda_error": e_lam, "mu_error": e_mu})
            if e_lam > tol:
                report.failures.append((ci, j, "lambda"))
            if e_mu > tol:
                report.failures.append((ci, j, "mu"))
    return report


def cx_integral_form(
    prob: ProblemDef, traj: Trajectory, u: ControlSignal, t: Optional[float] = None, p=None
) -> np.ndarray:
    """Cost-to-go gradient from the transition-matrix representation.

    Returns the row ``C_x(t)`` of length ``n``, or an ``(N, n)`` array for all
    nodes when ``t`` is None.  The integral uses Hermite-Simpson quadrature,
    with the transition matrix at interval midpoints taken from its cubic
    Hermite interpolant.
    """
    n = prob.n
    stms = propagate_stm(prob, traj, u, p=p)
    S = stms.mats
    s, (Al, Am, Ar) = segment_jacobians(prob, traj, u, p)
    h = s["h"]
    Sl, Sr = S[:-1], S[1:]
    Sm = 0.5 * (Sl + Sr) + (h[:, None, None] / 8.0) * (Al @ Sl - Ar @ Sr)
    Lx = [prob.L_x(x, uu, tt) for x, uu, tt in zip(s["x"], s["u"], s["t"])]
    g = (h[:, None] / 6.0) * (
        np.einsum("ki,kij->kj", Lx[0], Sl)
        + 4.0 * np.einsum("ki,kij->kj", Lx[1], Sm)
        + np.einsum("ki,kij->kj", Lx[2], Sr)
    )
    tail = np.concatenate([np.cumsum(g[::-1], axis=0)[::-1], np.zeros((1, n))])
    phi_x = np.asarray(prob.phi_x(traj.states[-1, :n], prob.tf), dtype=float)
    rows = phi_x @ S[-1] + tail  # (N, n): C_x(t) S(t|t0)
    idx = range(traj.grid.N) if t is None else [traj.grid.index_of(t)]
    out = np.empty((len(idx), n))
    for r, j in enumerate(idx):
        if j == traj.grid.N - 1:
            out[r] = phi_x  # empty integral, identity transition
            continue
        cond = float(np.linalg.cond(S[j]))
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise IllConditioned(cond)
        out[r] = np.linalg.solve(S[j].T, rows[j])
    return out if t is None else out[0]
