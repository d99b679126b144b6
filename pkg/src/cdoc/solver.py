"""Direct collocation of the augmented problem and its solution.

Decision vector: the augmented state ``z = [x | p | lam | mu]`` at all ``N``
nodes followed by the controls at all nodes.  Equality constraints, in order:

* Hermite-Simpson defects on every interval (``(N-1) * 2(n+l)`` rows),
* initial values of ``x`` and ``p`` (``n + l`` rows),
* ``lam(tf) - phi_x`` and ``mu(tf)`` (``n + l`` rows),
* the terminal constraint ``psi`` (``k`` rows).

The control at an interval midpoint is the mean of its end values (the
circular mean for heading-type controls), i.e. the control is piecewise
linear, so the decision vector keeps one control sample
per node.  The objective is the terminal cost plus the Simpson quadrature of
``L + mu^T Q mu``, which is exactly :func:`cdoc.core.eval_cost` plus
:func:`cdoc.augment.sensitivity_cost` on the same grid.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_solve_banded, cholesky_banded

from .adjoint import propagate_costates
from .augment import AugmentedProblem, WeightSchedule, build_augmented, sensitivity_cost
from .core import (
    ControlSignal,
    ProblemDef,
    TimeGrid,
    Trajectory,
    _central_jacobian,
    eval_cost,
)
from .optim import NonFiniteObjective, augmented_lagrangian

log = logging.getLogger(__name__)

COSTATE_CHECK_TOL = 1e-2


@dataclass(frozen=True)
class SolverOptions:
    N: int = 101
    outer_iterations: int = 50
    inner_iterations: int = 200
    constraint_tol: float = 1e-6
    stationarity_tol: float = 1e-6
    penalty_growth: float = 10.0
    initial_penalty: float = 100.0
    max_penalty: float = 1e8
    gradient_mode: str = "analytic-chain"
    seed: int = 0
    starts: int = 1
    memory: int = 20
    precondition: bool = True
    precondition_refresh: int = 10
    polish_steps: int = 8

    def __post_init__(self):
        for name in ("constraint_tol", "stationarity_tol", "penalty_growth", "initial_penalty"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.gradient_mode not in ("analytic-chain", "finite-difference"):
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")
        if self.precondition_refresh < 1:
            raise ValueError("precondition_refresh must be >= 1")
        if self.polish_steps < 0:
            raise ValueError("polish_steps must be >= 0")
        if self.starts < 1:
            raise ValueError("starts must be >= 1")


class _Evaluation:
    """Objective, constraints and Jacobian blocks at one decision vector."""

    def __init__(self, tr: "Transcription", w: np.ndarray):
        aug, base = tr.aug, tr.aug.base
        N, d, m, n, l = tr.N, tr.d, tr.m, base.n, base.l
        s = aug.slices
        Z, U = tr.unpack(w)
        t = tr.grid.nodes
        h = tr.grid.steps
        mode = tr.opts.gradient_mode
        with np.errstate(over="ignore", invalid="ignore"):
            F, A, B, ell, ell_z, ell_u = aug.linearize(Z, U, t, mode)
            hc = h[:, None]
            Zm = 0.5 * (Z[:-1] + Z[1:]) + hc / 8.0 * (F[:-1] - F[1:])
            if tr.periodic:
                Um = U[:-1] + 0.5 * _wrap(U[1:] - U[:-1])
            else:
                Um = 0.5 * (U[:-1] + U[1:])
            Fm, Am, Bm, ellm, ellm_z, ellm_u = aug.linearize(Zm, Um, tr.grid.midpoints, mode)

        eye = np.eye(d)
        h3 = h[:, None, None]
        Jzl = 0.5 * eye + h3 / 8.0 * A[:-1]
        Jzr = 0.5 * eye - h3 / 8.0 * A[1:]
        Jul = h3 / 8.0 * B[:-1]
        Jur = -h3 / 8.0 * B[1:]
        AmJzl = Am @ Jzl
        AmJzr = Am @ Jzr
        self.DZl = -eye - h3 / 6.0 * (A[:-1] + 4.0 * AmJzl)
        self.DZr = eye - h3 / 6.0 * (A[1:] + 4.0 * AmJzr)
        self.DUl = -h3 / 6.0 * (B[:-1] + 4.0 * (Am @ Jul + 0.5 * Bm))
        self.DUr = -h3 / 6.0 * (B[1:] + 4.0 * (Am @ Jur + 0.5 * Bm))
        defects = Z[1:] - Z[:-1] - hc / 6.0 * (F[:-1] + 4.0 * Fm + F[1:])

        xN = Z[-1, s["x"]]
        tf = base.tf
        phi_x = np.asarray(base.phi_x(xN, tf), dtype=float)
        self.phi_xx = _central_jacobian(lambda y: np.asarray(base.phi_x(y, tf), dtype=float), xN, 1e-6)
        self.psi_x = base.psi_jacobian(xN)
        c_init = aug.initial_residual(Z[0])
        c_term = aug.terminal_residual(Z[-1])
        self.c = np.concatenate([defects.ravel(), c_init, c_term])

        self.f = float(base.phi(xN, tf)) + float(np.sum(h / 6.0 * (ell[:-1] + 4.0 * ellm + ell[1:])))
        if not np.isfinite(self.f) or not np.all(np.isfinite(self.c)):
            self.f = np.inf
        gZ = np.zeros((N, d))
        gU = np.zeros((N, m))
        wl = (h / 6.0)[:, None]
        gZ[:-1] += wl * (ell_z[:-1] + 4.0 * np.einsum("ki,kij->kj", ellm_z, Jzl))
        gZ[1:] += wl * (ell_z[1:] + 4.0 * np.einsum("ki,kij->kj", ellm_z, Jzr))
        gU[:-1] += wl * (ell_u[:-1] + 4.0 * (np.einsum("ki,kij->kj", ellm_z, Jul) + 0.5 * ellm_u))
        gU[1:] += wl * (ell_u[1:] + 4.0 * (np.einsum("ki,kij->kj", ellm_z, Jur) + 0.5 * ellm_u))
        gZ[-1, s["x"]] += phi_x
        self.grad = tr.pack(gZ, gU)
        self._tr = tr
        self.w = np.asarray(w, dtype=float)

    def jt(self, v: np.ndarray) -> np.ndarray:
        tr = self._tr
        N, d, n, l = tr.N, tr.d, tr.aug.n, tr.aug.l
        s = tr.aug.slices
        nd = (N - 1) * d
        vd = v[:nd].reshape(N - 1, d)
        vi = v[nd: nd + n + l]
        vt = v[nd + n + l:]
        gZ = np.zeros((N, d))
        gU = np.zeros((N, tr.m))
        gZ[:-1] += np.einsum("kij,ki->kj", self.DZl, vd)
        gZ[1:] += np.einsum("kij,ki->kj", self.DZr, vd)
        gU[:-1] += np.einsum("kij,ki->kj", self.DUl, vd)
        gU[1:] += np.einsum("kij,ki->kj", self.DUr, vd)
        gZ[0, : n + l] += vi
        gZ[-1, s["lam"]] += vt[:n]
        gZ[-1, s["x"]] -= self.phi_xx.T @ vt[:n]
        gZ[-1, s["mu"]] += vt[n: n + l]
        if tr.k:
            gZ[-1, s["x"]] += self.psi_x.T @ vt[n + l:]
        return tr.pack(gZ, gU)

    def jacobian(self) -> sp.csr_matrix:
        tr = self._tr
        N, d, m, n, l = tr.N, tr.d, tr.m, tr.aug.n, tr.aug.l
        s = tr.aug.slices
        rows, cols, vals = [], [], []

        def block(r0, c0, M):
            r, c = np.nonzero(np.ones_like(M, dtype=bool))
            rows.append(r0 + r)
            cols.append(c0 + c)
            vals.append(M.ravel())

        zoff = 0
        uoff = N * d
        for i in range(N - 1):
            r0 = i * d
            block(r0, zoff + i * d, self.DZl[i])
            block(r0, zoff + (i + 1) * d, self.DZr[i])
            block(r0, uoff + i * m, self.DUl[i])
            block(r0, uoff + (i + 1) * m, self.DUr[i])
        r0 = (N - 1) * d
        block(r0, 0, np.eye(n + l))
        r0 += n + l
        last = (N - 1) * d
        block(r0, last + s["lam"].start, np.eye(n))
        block(r0, last + s["x"].start, -self.phi_xx)
        block(r0 + n, last + s["mu"].start, np.eye(l))
        if tr.k:
            block(r0 + n + l, last + s["x"].start, self.psi_x)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(tr.n_constraints, tr.n_vars),
        )


class Transcription:
    """Hermite-Simpson transcription of an :class:`AugmentedProblem`."""

    def __init__(self, aug: AugmentedProblem, opts: SolverOptions):
        self.aug = aug
        self.opts = opts
        base = aug.base
        self.grid = TimeGrid.uniform(base.t0, base.tf, opts.N)
        self.N = opts.N
        self.d = aug.dim
        self.m = base.m
        self.k = base.k
        self.periodic = bool(base.meta.get("wrap_control"))

    @property
    def n_vars(self) -> int:
        return self.N * (self.d + self.m)

    @property
    def n_constraints(self) -> int:
        nl = self.aug.n + self.aug.l
        return (self.N - 1) * self.d + nl + nl + self.k

    def unpack(self, w):
        w = np.asarray(w, dtype=float)
        Z = w[: self.N * self.d].reshape(self.N, self.d)
        U = w[self.N * self.d:].reshape(self.N, self.m)
        return Z, U

    def pack(self, Z, U) -> np.ndarray:
        return np.concatenate([np.asarray(Z, dtype=float).ravel(), np.asarray(U, dtype=float).ravel()])

    def evaluate(self, w) -> _Evaluation:
        return _Evaluation(self, w)

    def objective(self, w) -> float:
        return self.evaluate(w).f

    def constraints(self, w) -> np.ndarray:
        return self.evaluate(w).c

    def initial_guess(self, u_init: Optional[np.ndarray] = None) -> np.ndarray:
        """Cold start: states held at ``x0``, parameters at ``p0``, ``lam`` linear
        from zero to ``phi_x``, ``mu = 0`` and ``u = u_init`` (zero by default).

        A forward simulation of the initial control is deliberately avoided:
        on open-loop unstable dynamics it produces states and co-states that are
        orders of magnitude away from the optimum.
        """
        base = self.aug.base
        N = self.N
        U = np.zeros((N, self.m)) if u_init is None else np.broadcast_to(
            np.asarray(u_init, dtype=float).reshape(-1, self.m), (N, self.m))
        t = self.grid.nodes
        s = ((t - t[0]) / (t[-1] - t[0]))[:, None]
        phi_x = np.asarray(base.phi_x(base.x0, base.tf), dtype=float).reshape(1, base.n)
        Z = np.concatenate([
            np.tile(base.x0, (N, 1)), np.tile(base.p0, (N, 1)), s * phi_x, np.zeros((N, base.l)),
        ], axis=1)
        return self.pack(Z, U)

    def node_order(self) -> np.ndarray:
        """``(N, d + m)`` array: position in the decision vector of node ``j``, component ``q``."""
        N, d, m = self.N, self.d, self.m
        order = np.empty((N, d + m), dtype=int)
        order[:, :d] = np.arange(N * d).reshape(N, d)
        order[:, d:] = N * d + np.arange(N * m).reshape(N, m)
        return order

    def merit_hessian(self, w: np.ndarray, v: np.ndarray, rho: float, ev: _Evaluation):
        """Hessian of ``f + v^T c + rho/2 |c|^2`` (curvature of ``c`` weighted by ``v``),
        in node-major variable order, as a sparse matrix.

        Lagrangian curvature comes from central differences of ``grad f + J^T v``;
        a node couples only to its neighbours, so perturbing every third node
        at once recovers all columns with ``6 (d + m)`` gradient evaluations.
        """
        order = self.node_order()
        N, b = order.shape
        steps = 1e-5 * (1.0 + np.abs(w))

        def G(x):
            e = self.evaluate(x)
            return e.grad + e.jt(v)

        H = np.zeros((N, b, 3, b))  # H[a, qr, o, qc] couples (a, qr) with (a + o - 1, qc)
        a = np.arange(N)
        for r in range(3):
            nodes = np.arange(r, N, 3)
            off = (r - a + 1) % 3 - 1
            j = a + off
            ok = (j >= 0) & (j < N)
            for q in range(b):
                cols = order[nodes, q]
                E = np.zeros_like(w)
                E[cols] = steps[cols]
                dG = (G(w + E) - G(w - E))[order] / 2.0
                H[a[ok], :, off[ok] + 1, q] = dG[ok] / steps[order[j[ok], q]][:, None]
        ai, qr, o, qc = np.meshgrid(np.arange(N), np.arange(b), np.arange(3), np.arange(b), indexing="ij")
        rows = ai * b + qr
        cols = (ai + o - 1) * b + qc
        keep = (ai + o - 1 >= 0) & (ai + o - 1 < N)
        Hs = sp.coo_matrix((H[keep], (rows[keep], cols[keep])), shape=(N * b, N * b)).tocsr()
        Hs = 0.5 * (Hs + Hs.T)
        Jp = ev.jacobian()[:, order.ravel()]
        return (Hs + rho * (Jp.T @ Jp)).tocsr()

    def preconditioner(self, ev: _Evaluation, y: np.ndarray, rho: float):
        """Inverse of the (shifted to positive definite) merit Hessian at ``ev``.

        The matrix is banded in node-major order; a banded Cholesky is attempted
        with a growing diagonal shift until it succeeds.
        """
        w = ev.w
        v = y + rho * ev.c
        M = self.merit_hessian(w, v, rho, ev)
        order = self.node_order().ravel()
        u = 2 * (self.d + self.m) - 1
        n = M.shape[0]
        ab = np.zeros((u + 1, n))
        for k in range(min(u, n - 1) + 1):
            ab[u - k, k:] = M.diagonal(k)
        diag = ab[u].copy()
        floor = 1e-10 * max(1.0, float(np.max(np.abs(diag))))
        tau = floor if diag.min() > floor else floor - diag.min()
        while True:
            ab[u] = diag + tau
            try:
                chol = cholesky_banded(ab)
                break
            except np.linalg.LinAlgError:
                tau *= 10.0

        def apply(g):
            out = np.empty_like(g)
            out[order] = cho_solve_banded((chol, False), g[order])
            return out

        return apply

    def kkt_residual(self, ev: _Evaluation, y: np.ndarray) -> float:
        return max(float(np.max(np.abs(ev.grad + ev.jt(y)))), float(np.max(np.abs(ev.c), initial=0.0)))

    def polish(self, w: np.ndarray, y: np.ndarray, steps: int, tol: float = 1e-12):
        """Full Newton steps on the first-order conditions ``grad f + J^T y = 0``,
        ``c = 0``, started from a converged point.

        The augmented Lagrangian stops at a stationarity level limited by the
        quasi-Newton inner solver, and on ill-conditioned programs the
        remaining error in the controls can be far larger than the residual
        suggests.  The iteration is not monotone in the KKT residual, so the
        best iterate seen is returned.
        """
        order = self.node_order().ravel()
        ev = self.evaluate(w)
        best = (self.kkt_residual(ev, y), w, y)
        for _ in range(steps):
            if best[0] <= tol:
                break
            H = self.merit_hessian(w, y, 0.0, ev)
            Jp = ev.jacobian()[:, order]
            K = sp.bmat([[H, Jp.T], [Jp, None]], format="csc")
            rhs = -np.concatenate([(ev.grad + ev.jt(y))[order], ev.c])
            with np.errstate(all="ignore"):
                step = spla.spsolve(K, rhs)
            if not np.all(np.isfinite(step)):
                break
            w = w.copy()
            w[order] += step[: w.size]
            y = y + step[w.size:]
            ev = self.evaluate(w)
            if not np.isfinite(ev.f):
                break
            r = self.kkt_residual(ev, y)
            log.debug("polish: kkt residual %.3e", r)
            if r < best[0]:
                best = (r, w, y)
        return best[1], best[2]

    def least_squares_multipliers(self, ev: _Evaluation) -> np.ndarray:
        """Multipliers minimising ``|grad f + J^T y|`` (lightly regularised)."""
        J = ev.jacobian()
        K = (J @ J.T + 1e-10 * sp.identity(self.n_constraints)).tocsc()
        y = spla.spsolve(K, -(J @ ev.grad))
        return y if np.all(np.isfinite(y)) else np.zeros(self.n_constraints)


@dataclass
class DesensitizedSolution:
    """Result of a desensitized solve.

    ``u`` is the reported control (wrapped to ``(-pi, pi]`` for heading
    controls); ``u_solved`` is the control exactly as optimised.
    """

    u: ControlSignal
    z: Trajectory
    J: float
    Jc: float
    Js: float
    objective: float
    residuals: dict
    converged: bool
    iterations: dict
    status: str
    weights: list
    options: dict
    n: int
    l: int
    u_solved: Optional[ControlSignal] = field(default=None, repr=False)
    costate_check: Optional[float] = None
    history: list = field(default_factory=list, repr=False)

    @property
    def grid(self) -> TimeGrid:
        return self.z.grid

    def part(self, name: str) -> np.ndarray:
        """Columns of the augmented trajectory: ``x``, ``p``, ``lam`` or ``mu``."""
        n, l = self.n, self.l
        sl = {"x": slice(0, n), "p": slice(n, n + l), "lam": slice(n + l, 2 * n + l),
              "mu": slice(2 * n + l, 2 * n + 2 * l)}[name]
        return self.z.states[:, sl]


def transcribe(aug: AugmentedProblem, opts: Optional[SolverOptions] = None) -> Transcription:
    opts = SolverOptions() if opts is None else opts
    tr = Transcription(aug, opts)
    if tr.k:
        base = aug.base
        Jpsi = base.psi_jacobian(base.x0)
        if tr.k > base.n or np.linalg.matrix_rank(Jpsi) < tr.k:
            log.warning("terminal constraint Jacobian is rank deficient at the initial point")
    return tr


def _wrap(values):
    return values - 2 * np.pi * np.ceil((values - np.pi) / (2 * np.pi))


def _residual_summary(tr: Transcription, c: np.ndarray) -> dict:
    nl = tr.aug.n + tr.aug.l
    nd = (tr.N - 1) * tr.d
    parts = {
        "defects": c[:nd],
        "initial": c[nd: nd + nl],
        "transversality": c[nd + nl: nd + 2 * nl],
        "terminal_constraint": c[nd + 2 * nl:],
    }
    out = {k: float(np.max(np.abs(v), initial=0.0)) for k, v in parts.items()}
    out["max"] = max(out.values())
    return out


def solve(
    trans: Transcription, init: Optional[np.ndarray] = None, opts: Optional[SolverOptions] = None
) -> DesensitizedSolution:
    """Solve the transcribed program with the augmented Lagrangian method.

    ``init`` is a full decision vector (warm start) or None for the cold
    start of :meth:`Transcription.initial_guess`.  Additional starts
    (``opts.starts > 1``) perturb the initial control with ``opts.seed``; the
    best converged run by objective is returned.
    """
    opts = trans.opts if opts is None else opts
    starts = [trans.initial_guess() if init is None else np.asarray(init, dtype=float)]
    rng = np.random.default_rng(opts.seed)
    for _ in range(opts.starts - 1):
        starts.append(trans.initial_guess(0.5 * rng.standard_normal((trans.N, trans.m))))
    precond = trans.preconditioner if opts.precondition else None
    best = None
    for w0 in starts:
        res = augmented_lagrangian(
            trans.evaluate, w0,
            ctol=opts.constraint_tol, gtol=opts.stationarity_tol,
            max_outer=opts.outer_iterations, max_inner=opts.inner_iterations,
            rho0=opts.initial_penalty, rho_growth=opts.penalty_growth,
            rho_max=opts.max_penalty, memory=opts.memory, precond_factory=precond,
            multiplier_init=trans.least_squares_multipliers,
            refresh=opts.precondition_refresh if opts.precondition else None,
        )
        if not np.isfinite(res.f):
            raise NonFiniteObjective("objective is not finite at the solver's best iterate")
        key = (res.converged, -res.f)
        if best is None or key > best[0]:
            best = (key, res)
    res = best[1]
    if res.converged and opts.polish_steps:
        res.x, res.multipliers = trans.polish(res.x, res.multipliers, opts.polish_steps)
    return _package(trans, res, opts)


def _package(trans: Transcription, res, opts: SolverOptions) -> DesensitizedSolution:
    aug, base = trans.aug, trans.aug.base
    Z, U = trans.unpack(res.x)
    if trans.periodic:
        U = np.unwrap(U, axis=0)
        U = U - 2 * np.pi * np.round(np.mean(U, axis=0) / (2 * np.pi))
    u = ControlSignal(trans.grid, U)
    z = Trajectory(trans.grid, Z, base.p0)
    x_traj = Trajectory(trans.grid, Z[:, : base.n], base.p0)
    J = eval_cost(base, x_traj, u)
    Jc = sensitivity_cost(aug, z, u)
    ev = trans.evaluate(res.x)
    u_out = ControlSignal(trans.grid, _wrap(U)) if base.meta.get("wrap_control") else u
    return DesensitizedSolution(
        u=u_out, z=z, J=J, Jc=Jc, Js=J + Jc, objective=ev.f,
        residuals=_residual_summary(trans, ev.c),
        converged=bool(res.converged),
        iterations={"outer": res.outer_iterations, "inner": res.inner_iterations},
        status=res.status, weights=aug.Q.diag(base.t0).tolist(), options=asdict(opts),
        n=base.n, l=base.l, u_solved=u, history=res.history,
    )


def costate_discrepancy(prob: ProblemDef, sol: DesensitizedSolution) -> float:
    """Relative gap between the co-state decision variables and a backward pass along (x*, u*)."""
    x = Trajectory(sol.grid, sol.part("x"), prob.p0)
    co = propagate_costates(prob, x, sol.u_solved)
    lam, mu = sol.part("lam"), sol.part("mu")
    scale = 1.0 + max(np.max(np.abs(co.lambdas)), np.max(np.abs(co.mus)))
    return float(max(np.max(np.abs(lam - co.lambdas)), np.max(np.abs(mu - co.mus))) / scale)


def solve_cdoc(
    prob: ProblemDef, Q: Optional[WeightSchedule] = None, opts: Optional[SolverOptions] = None,
    init: Optional[np.ndarray] = None,
) -> DesensitizedSolution:
    """Build the augmented problem, transcribe, solve, and back-check the co-states."""
    opts = SolverOptions() if opts is None else opts
    aug = build_augmented(prob, Q)
    trans = transcribe(aug, opts)
    sol = solve(trans, init, opts)
    gap = costate_discrepancy(prob, sol)
    sol.costate_check = gap
    if gap > COSTATE_CHECK_TOL:
        sol.converged = False
        sol.status = f"co-state back-check failed ({gap:.2e})"
    return sol
