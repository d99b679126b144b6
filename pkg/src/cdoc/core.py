"""Problem representation, fixed-step integration, and cost evaluation.

Evaluator conventions (all arrays float64):

    f(x, p, u, t)   -> (..., n)        dynamics
    f_x(x, p, u, t) -> (..., n, n)
    f_p(x, p, u, t) -> (..., n, l)
    L(x, u, t)      -> (...)           running cost
    L_x(x, u, t)    -> (..., n)
    phi(xf, tf)     -> scalar          terminal cost
    phi_x(xf, tf)   -> (n,)
    psi(xf, tf)     -> (k,)            terminal constraint

``x`` has shape ``(..., n)``, ``p`` ``(..., l)``, ``u`` ``(..., m)`` and ``t``
is a scalar or ``(...)``.  Problems built with ``vectorized=True`` must
broadcast over the leading axes; otherwise evaluators are called point by
point.

Cost integrals use Hermite-Simpson quadrature on the grid: the interval
midpoint state is the cubic Hermite interpolant built from the stored states
and their derivatives, and Simpson's rule is applied to the running cost.  The
same rule is used by the collocation transcription in :mod:`cdoc.solver`, so a
transcribed objective and :func:`eval_cost` agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

DEFAULT_NODES = 101


class DimensionError(ValueError):
    """An evaluator returned an array of the wrong shape."""

    def __init__(self, evaluator: str, expected, got):
        self.evaluator = evaluator
        super().__init__(f"{evaluator}: expected shape {expected}, got {got}")


class GridMismatch(ValueError):
    pass


class IntegrationDiverged(RuntimeError):
    """Non-finite values appeared while stepping; ``node`` is the first bad node."""

    def __init__(self, node: int, what: str = "state"):
        self.node = node
        super().__init__(f"{what} became non-finite at node {node}")


# ---------------------------------------------------------------------------
# Grids, controls, trajectories


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, t0: float, tf: float, N: int = DEFAULT_NODES) -> "TimeGrid":
        if N < 2:
            raise ValueError("N must be >= 2")
        nodes = np.linspace(t0, tf, N)
        nodes[0], nodes[-1] = t0, tf
        return cls(nodes)

    @property
    def N(self) -> int:
        return self.nodes.size

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def tf(self) -> float:
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def index_of(self, t: float) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is not a node."""
        idx = int(np.searchsorted(self.nodes, t))
        scale = 1e-12 * max(1.0, abs(self.tf), abs(self.t0))
        for j in (idx - 1, idx):
            if 0 <= j < self.N and abs(self.nodes[j] - t) <= scale:
                return j
        raise GridMismatch(f"t={t!r} is not a grid node")

    def sub(self, start: int) -> "TimeGrid":
        return TimeGrid(self.nodes[start:])

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.nodes, other.nodes)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Control samples on a grid.

    ``interp`` is ``"linear"`` (piecewise-linear, the default) or ``"zoh"``
    (zero-order hold: the value at node ``i`` is held on ``[t_i, t_{i+1})``).
    """

    grid: TimeGrid
    values: np.ndarray
    interp: str = "linear"

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.grid.N:
            raise GridMismatch(
                f"control has {values.shape[0]} rows for a {self.grid.N}-node grid"
            )
        if self.interp not in ("linear", "zoh"):
            raise ValueError(f"unknown interpolation rule {self.interp!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: TimeGrid, value, interp: str = "linear") -> "ControlSignal":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.N, 1)), interp)

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable, interp: str = "linear"):
        vals = np.array([np.atleast_1d(fn(t)) for t in grid.nodes], dtype=float)
        return cls(grid, vals, interp)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def at(self, t, side: str = "right") -> np.ndarray:
        """Evaluate at times ``t``.

        For zero-order hold, ``side="left"`` returns the left limit, i.e. the
        value held on the interval that *ends* at a node.
        """
        t = np.asarray(t, dtype=float)
        nodes = self.grid.nodes
        if self.interp == "linear":
            flat = np.atleast_1d(t).ravel()
            out = np.stack(
                [np.interp(flat, nodes, self.values[:, j]) for j in range(self.m)],
                axis=-1,
            )
            return out.reshape(t.shape + (self.m,))
        idx = np.searchsorted(nodes, t, side="right" if side == "right" else "left") - 1
        idx = np.clip(idx, 0, self.grid.N - 1)
        return self.values[idx]

    def check_bounds(self, bounds) -> bool:
        if bounds is None:
            return True
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
        return bool(np.all(self.values >= lo) and np.all(self.values <= hi))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """State samples on a grid; ``params`` is the parameter vector used, if any."""

    grid: TimeGrid
    states: np.ndarray
    params: Optional[np.ndarray] = None

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape[0] != self.grid.N:
            raise GridMismatch(
                f"trajectory has {states.shape[0]} rows for a {self.grid.N}-node grid"
            )
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        if self.params is not None:
            params = np.array(self.params, dtype=float).reshape(-1)
            params.setflags(write=False)
            object.__setattr__(self, "params", params)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


# ---------------------------------------------------------------------------
# Problem definition


def _pointwise(fn, nargs_vec):
    """Wrap a point evaluator so it accepts stacked leading axes."""

    def wrapped(*args):
        arrs = [np.asarray(a, dtype=float) for a in args]
        batch = np.broadcast_shapes(
            *[a.shape[:-1] if i < nargs_vec else a.shape for i, a in enumerate(arrs)]
        )
        if batch == ():
            return np.asarray(fn(*arrs), dtype=float)
        full = [
            np.broadcast_to(a, batch + a.shape[-1:]) if i < nargs_vec
            else np.broadcast_to(a, batch)
            for i, a in enumerate(arrs)
        ]
        out = [
            np.asarray(fn(*[a[idx] for a in full]), dtype=float)
            for idx in np.ndindex(*batch)
        ]
        return np.stack(out).reshape(batch + out[0].shape)

    return wrapped


@dataclass(frozen=True, eq=False)
class ProblemDef:
    """A fixed-final-time optimal control problem with uncertain parameters.

    The evaluators are checked for output shapes against random probe inputs
    when the problem is constructed.
    """

    n: int
    m: int
    l: int
    t0: float
    tf: float
    x0: np.ndarray
    p0: np.ndarray
    f: Callable
    f_x: Callable
    f_p: Callable
    L: Callable
    L_x: Callable
    phi: Callable
    phi_x: Callable
    psi: Optional[Callable] = None
    k: int = 0
    psi_x: Optional[Callable] = None
    u_bounds: Optional[tuple] = None
    vectorized: bool = True
    name: str = "problem"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.t0 < self.tf:
            raise ValueError("t0 must be < tf")
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        p0 = np.array(self.p0, dtype=float).reshape(-1)
        if x0.size != self.n:
            raise DimensionError("x0", (self.n,), x0.shape)
        if p0.size != self.l:
            raise DimensionError("p0", (self.l,), p0.shape)
        x0.setflags(write=False)
        p0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "p0", p0)
        if (self.psi is None) != (self.k == 0):
            raise ValueError("psi must be given exactly when k > 0")
        if not self.vectorized:
            for name, nv in (("f", 3), ("f_x", 3), ("f_p", 3), ("L", 2), ("L_x", 2)):
                object.__setattr__(self, name, _pointwise(getattr(self, name), nv))
        self._check_shapes()

    def _check_shapes(self, seed: int = 12345):
        rng = np.random.default_rng(seed)
        n, m, l, k = self.n, self.m, self.l, self.k
        for batch in ((), (3,)):
            x = rng.standard_normal(batch + (n,))
            p = self.p0 + rng.standard_normal(batch + (l,))
            u = rng.standard_normal(batch + (m,))
            t = rng.uniform(self.t0, self.tf, size=batch) if batch else 0.5 * (self.t0 + self.tf)
            checks = (
                ("f", self.f(x, p, u, t), batch + (n,)),
                ("f_x", self.f_x(x, p, u, t), batch + (n, n)),
                ("f_p", self.f_p(x, p, u, t), batch + (n, l)),
                ("L", self.L(x, u, t), batch),
                ("L_x", self.L_x(x, u, t), batch + (n,)),
            )
            for name, out, shape in checks:
                got = np.shape(out)
                if got != shape:
                    raise DimensionError(name, shape, got)
        xf = rng.standard_normal(n)
        terminal = [
            ("phi", np.shape(self.phi(xf, self.tf)), ()),
            ("phi_x", np.shape(self.phi_x(xf, self.tf)), (n,)),
        ]
        if k:
            terminal.append(("psi", np.shape(self.psi(xf, self.tf)), (k,)))
            if self.psi_x is not None:
                terminal.append(("psi_x", np.shape(self.psi_x(xf, self.tf)), (k, n)))
        for name, got, shape in terminal:
            if got != shape:
                raise DimensionError(name, shape, got)

    def grid(self, N: int = DEFAULT_NODES) -> TimeGrid:
        return TimeGrid.uniform(self.t0, self.tf, N)

    def terminal_residual(self, xf) -> np.ndarray:
        if not self.k:
            return np.zeros(0)
        return np.asarray(self.psi(xf, self.tf), dtype=float).reshape(-1)

    def psi_jacobian(self, xf) -> np.ndarray:
        if not self.k:
            return np.zeros((0, self.n))
        if self.psi_x is not None:
            return np.asarray(self.psi_x(xf, self.tf), dtype=float)
        return _central_jacobian(lambda y: self.terminal_residual(y), xf, 1e-6)


def _central_jacobian(fn, x, rel_step):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = rel_step * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# Jacobian self-check


@dataclass
class JacobianReport:
    max_rel_error: dict
    tol: float

    @property
    def failing(self) -> list:
        return [k for k, v in self.max_rel_error.items() if not v <= self.tol]

    @property
    def passed(self) -> bool:
        return not self.failing


def validate_jacobians(
    prob: ProblemDef, probes: int = 5, seed: int = 0, tol: float = 1e-4
) -> JacobianReport:
    """Compare user Jacobians with central differences at random probe points.

    The error metric is ``|J - J_fd| / (1 + |J_fd|)`` entrywise, maximised over
    probes.  Shape mismatches raise :class:`DimensionError`.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    prob._check_shapes(seed)
    rng = np.random.default_rng(seed)
    rel = 1e-6
    errs = {"f_x": 0.0, "f_p": 0.0, "L_x": 0.0, "phi_x": 0.0}
    if prob.k and prob.psi_x is not None:
        errs["psi_x"] = 0.0

    def score(name, exact, approx):
        e = np.max(np.abs(exact - approx) / (1.0 + np.abs(approx)), initial=0.0)
        errs[name] = max(errs[name], float(e))

    for _ in range(probes):
        x = rng.standard_normal(prob.n)
        p = prob.p0 + rng.standard_normal(prob.l)
        u = rng.standard_normal(prob.m)
        t = float(rng.uniform(prob.t0, prob.tf))
        score("f_x", prob.f_x(x, p, u, t), _central_jacobian(lambda y: prob.f(y, p, u, t), x, rel))
        score("f_p", prob.f_p(x, p, u, t), _central_jacobian(lambda q: prob.f(x, q, u, t), p, rel))
        score("L_x", prob.L_x(x, u, t), _central_jacobian(lambda y: prob.L(y, u, t), x, rel))
        score("phi_x", prob.phi_x(x, prob.tf), _central_jacobian(lambda y: prob.phi(y, prob.tf), x, rel))
        if "psi_x" in errs:
            score("psi_x", prob.psi_x(x, prob.tf), _central_jacobian(lambda y: prob.psi(y, prob.tf), x, rel))
    return JacobianReport(errs, tol)


# ---------------------------------------------------------------------------
# Integration


def _rk4_states(prob: ProblemDef, x_start, p, u: ControlSignal, nodes) -> np.ndarray:
    """Classical RK4 on ``nodes``; ``x_start`` may carry leading batch axes."""
    x = np.array(x_start, dtype=float)
    p = np.asarray(p, dtype=float)
    out = np.empty((nodes.size,) + x.shape)
    out[0] = x
    u_lo = u.at(nodes[:-1], side="right")
    u_mid = u.at(0.5 * (nodes[:-1] + nodes[1:]))
    u_hi = u.at(nodes[1:], side="left")
    f = prob.f
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(nodes.size - 1):
            t, h = nodes[i], nodes[i + 1] - nodes[i]
            tm = t + 0.5 * h
            k1 = f(x, p, u_lo[i], t)
            k2 = f(x + 0.5 * h * k1, p, u_mid[i], tm)
            k3 = f(x + 0.5 * h * k2, p, u_mid[i], tm)
            k4 = f(x + h * k3, p, u_hi[i], nodes[i + 1])
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise IntegrationDiverged(i + 1)
            out[i + 1] = x
    return out


def integrate(
    prob: ProblemDef,
    x_init,
    u: ControlSignal,
    grid: Optional[TimeGrid] = None,
    p=None,
) -> Trajectory:
    """Integrate the dynamics with fixed-step RK4 and return every node.

    ``grid`` defaults to the control's grid; a different (e.g. finer) grid is
    allowed as long as it spans ``[t0, tf]``.
    """
    grid = u.grid if grid is None else grid
    if abs(grid.t0 - prob.t0) > 1e-12 or abs(grid.tf - prob.tf) > 1e-12:
        raise GridMismatch("grid endpoints must equal (t0, tf)")
    x_init = np.asarray(x_init, dtype=float).reshape(-1)
    if x_init.size != prob.n:
        raise DimensionError("x_init", (prob.n,), x_init.shape)
    p = prob.p0 if p is None else np.asarray(p, dtype=float).reshape(-1)
    states = _rk4_states(prob, x_init, p, u, grid.nodes)
    return Trajectory(grid, states, p)


def integrate_from(prob: ProblemDef, x_start, p, u: ControlSignal, start: int) -> np.ndarray:
    """RK4 from node ``start`` of ``u.grid`` to ``tf``; batch axes allowed."""
    return _rk4_states(prob, x_start, p, u, u.grid.nodes[start:])


# ---------------------------------------------------------------------------
# Hermite-Simpson quadrature


def interval_samples(prob: ProblemDef, states, p, u: ControlSignal, nodes):
    """Left/mid/right states, controls and times for every grid interval.

    ``states`` has shape ``(..., T, n)`` on ``nodes`` (length ``T``).  The
    midpoint state is the cubic Hermite interpolant
    ``(x_i + x_{i+1})/2 + h/8 (f_i - f_{i+1})``.
    """
    h = np.diff(nodes)
    tl, tr = nodes[:-1], nodes[1:]
    tm = 0.5 * (tl + tr)
    ul, um, ur = u.at(tl, side="right"), u.at(tm), u.at(tr, side="left")
    xl, xr = states[..., :-1, :], states[..., 1:, :]
    fl = prob.f(xl, p, ul, tl)
    fr = prob.f(xr, p, ur, tr)
    xm = 0.5 * (xl + xr) + (h[:, None] / 8.0) * (fl - fr)
    return dict(h=h, t=(tl, tm, tr), u=(ul, um, ur), x=(xl, xm, xr), f=(fl, fr))


def running_increments(prob: ProblemDef, states, p, u: ControlSignal, nodes) -> np.ndarray:
    """Per-interval Hermite-Simpson running-cost integrals, shape ``(..., T-1)``."""
    s = interval_samples(prob, states, p, u, nodes)
    (xl, xm, xr), (ul, um, ur), (tl, tm, tr) = s["x"], s["u"], s["t"]
    return s["h"] / 6.0 * (prob.L(xl, ul, tl) + 4.0 * prob.L(xm, um, tm) + prob.L(xr, ur, tr))


def _running_increments(prob: ProblemDef, traj: Trajectory, u: ControlSignal) -> np.ndarray:
    if traj.grid != u.grid:
        raise GridMismatch("trajectory and control must share the grid")
    if traj.states.shape[1] < prob.n:
        raise DimensionError("trajectory", ("N", prob.n), traj.states.shape)
    p = prob.p0 if traj.params is None else traj.params
    return running_increments(prob, traj.states[:, : prob.n], p, u, traj.grid.nodes)


def running_cost_profile(prob: ProblemDef, traj: Trajectory, u: ControlSignal) -> np.ndarray:
    """Cumulative running cost ``int_{t0}^{t_i} L dt`` at every node."""
    return np.concatenate([[0.0], np.cumsum(_running_increments(prob, traj, u))])


def eval_cost(prob: ProblemDef, traj: Trajectory, u: ControlSignal) -> float:
    """Total cost: terminal cost plus the quadrature of the running cost."""
    inc = _running_increments(prob, traj, u)
    return float(prob.phi(traj.states[-1, : prob.n], prob.tf)) + float(np.sum(inc))


def cost_to_go(prob: ProblemDef, traj: Trajectory, u: ControlSignal, t: float) -> float:
    """Terminal cost plus the running cost accumulated from node ``t`` to ``tf``."""
    j = traj.grid.index_of(t)
    inc = _running_increments(prob, traj, u)
    return float(prob.phi(traj.states[-1, : prob.n], prob.tf)) + float(np.sum(inc[j:]))
