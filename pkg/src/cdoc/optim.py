"""Equality-constrained minimisation: augmented Lagrangian outer loop around a
limited-memory BFGS inner solver with backtracking (Armijo) line search.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class NonFiniteObjective(FloatingPointError):
    pass


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    evaluations: int
    status: str

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.g)))


def lbfgs(
    fun: Callable,
    x0: np.ndarray,
    gtol: float = 1e-6,
    maxiter: int = 200,
    memory: int = 10,
    precond: Optional[Callable] = None,
    c1: float = 1e-4,
    shrink: float = 0.5,
    max_backtracks: int = 50,
) -> LbfgsResult:
    """Minimise ``fun(x) -> (f, g)``.

    ``precond(v)`` applies an approximate inverse Hessian used as the initial
    matrix of the two-loop recursion (scaled by the usual ``s'y / y'Hy``).
    Status is ``"converged"`` (``max|g| <= gtol``), ``"maxiter"`` or
    ``"linesearch"`` when no sufficient decrease was found.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    evals = 1
    if not np.isfinite(f):
        raise NonFiniteObjective("objective is not finite at the starting point")
    pairs = deque(maxlen=memory)
    gamma = 1.0
    H0 = precond if precond is not None else (lambda v: v)
    for it in range(maxiter):
        if np.max(np.abs(g)) <= gtol:
            return LbfgsResult(x, f, g, it, evals, "converged")
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(pairs):
            a = rho * s.dot(q)
            alphas.append(a)
            q -= a * y
        r = gamma * H0(q)
        for (s, y, rho), a in zip(pairs, reversed(alphas)):
            b = rho * y.dot(r)
            r += (a - b) * s
        d = -r
        slope = g.dot(d)
        if not slope < 0:
            pairs.clear()
            gamma = 1.0
            d = -H0(g)
            slope = g.dot(d)
            if not slope < 0:
                d, slope = -g, -g.dot(g)
        step = 1.0 if (pairs or precond is not None) else min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
        for _ in range(max_backtracks):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            evals += 1
            if np.isfinite(f_new) and f_new <= f + c1 * step * slope:
                break
            step *= shrink
        else:
            return LbfgsResult(x, f, g, it, evals, "linesearch")
        s = x_new - x
        y = g_new - g
        sy = s.dot(y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
            Hy = H0(y)
            gamma = sy / y.dot(Hy)
        x, f, g = x_new, f_new, g_new
    status = "converged" if np.max(np.abs(g)) <= gtol else "maxiter"
    return LbfgsResult(x, f, g, maxiter, evals, status)


@dataclass
class AugLagResult:
    x: np.ndarray
    multipliers: np.ndarray
    f: float
    constraint_norm: float
    stationarity: float
    converged: bool
    outer_iterations: int
    inner_iterations: int
    penalty: float
    status: str
    history: list = field(default_factory=list)


def augmented_lagrangian(
    evaluate: Callable,
    x0: np.ndarray,
    ctol: float = 1e-6,
    gtol: float = 1e-6,
    max_outer: int = 50,
    max_inner: int = 200,
    rho0: float = 1.0,
    rho_growth: float = 10.0,
    rho_max: float = 1e8,
    memory: int = 10,
    precond_factory: Optional[Callable] = None,
    multiplier_init: Optional[Callable] = None,
    refresh: Optional[int] = None,
) -> AugLagResult:
    """Minimise ``f(x)`` subject to ``c(x) = 0``.

    ``evaluate(x)`` returns an object with ``f``, ``grad`` (gradient of f),
    ``c`` (constraint values) and ``jt(v)`` (``J^T v``).  The inner problem
    minimises ``f + y'c + rho/2 |c|^2`` to a gradient tolerance that tightens
    with the penalty; multipliers are updated when the constraint violation
    has dropped enough, otherwise the penalty grows (capped at ``rho_max``).
    ``precond_factory(ev, y, rho)`` may return an inverse-Hessian preconditioner
    for the inner solver, rebuilt at the start of each outer iteration.
    With ``refresh`` set, the inner solve restarts with a rebuilt
    preconditioner every ``refresh`` iterations.
    ``multiplier_init(ev)`` supplies starting multipliers (zero otherwise).
    """
    x = np.array(x0, dtype=float)
    ev0 = evaluate(x)
    y = np.zeros_like(np.asarray(ev0.c, dtype=float))
    if multiplier_init is not None:
        y = np.asarray(multiplier_init(ev0), dtype=float).reshape(y.shape)
    rho = float(rho0)
    omega = min(1e-2, 1.0 / rho)
    eta = min(1e-1, 1.0 / rho ** 0.1)
    inner_total = 0
    history = []
    best = None
    status = "maxouter"
    last_ev = ev0

    def merit(xv, mult, pen):
        ev = evaluate(xv)
        c = np.asarray(ev.c, dtype=float)
        val = ev.f + mult.dot(c) + 0.5 * pen * c.dot(c)
        grad = ev.grad + ev.jt(mult + pen * c)
        return float(val), grad

    for k in range(max_outer):
        used = 0
        while True:
            chunk = max_inner - used if refresh is None else min(refresh, max_inner - used)
            precond = precond_factory(last_ev, y, rho) if precond_factory is not None else None
            res = lbfgs(
                lambda v: merit(v, y, rho), x, gtol=max(omega, gtol), maxiter=chunk,
                memory=memory, precond=precond,
            )
            used += res.iterations
            x = res.x
            if res.status != "maxiter" or used >= max_inner:
                break
            last_ev = evaluate(x)
        res.iterations = used
        inner_total += res.iterations
        x = res.x
        last_ev = evaluate(x)
        c = np.asarray(last_ev.c, dtype=float)
        cnorm = float(np.max(np.abs(c), initial=0.0))
        stat = res.grad_norm
        history.append({"outer": k, "f": float(last_ev.f), "cnorm": cnorm, "grad": stat,
                        "rho": rho, "inner": res.iterations, "inner_status": res.status})
        feasible = cnorm <= ctol
        if best is None or (feasible, -stat if feasible else -cnorm) > best[0]:
            best = ((feasible, -stat if feasible else -cnorm), x.copy(), y.copy(), float(last_ev.f), cnorm, stat)
        if feasible and stat <= gtol:
            y = y + rho * c
            return AugLagResult(x, y, float(last_ev.f), cnorm, stat, True, k + 1,
                                inner_total, rho, "converged", history)
        if cnorm <= eta:
            y = y + rho * c
            eta = max(eta * min(0.1, rho ** -0.9), 0.1 * ctol)
            omega = max(omega * min(0.1, 1.0 / rho), 0.1 * gtol)
        else:
            if rho >= rho_max:
                status = "penalty-limit"
                break
            rho = min(rho * rho_growth, rho_max)
            eta = min(1e-1, 1.0 / rho ** 0.1)
            omega = min(1e-2, 1.0 / rho)
    _, xb, yb, fb, cb, sb = best
    return AugLagResult(xb, yb, fb, cb, sb, False, len(history), inner_total, rho, status, history)
