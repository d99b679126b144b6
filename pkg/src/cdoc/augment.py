"""The co-state augmented problem.

The uncertain parameters are promoted to constant states and the adjoint
equations of the original Hamiltonian are appended, giving the augmented
state ``z = [x | p | lam | mu]`` of length ``2(n + l)`` with

    x'   = f(x, p, u, t)
    p'   = 0
    lam' = -f_x^T lam - L_x^T
    mu'  = -f_p^T lam

and boundary data ``x(t0) = x0``, ``p(t0) = p0``, ``lam(tf) = phi_x^T``,
``mu(tf) = 0``.  Penalising ``mu^T Q mu`` in the running cost shrinks the
gradient of the cost-to-go with respect to the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .core import DimensionError, ControlSignal, ProblemDef, Trajectory, GridMismatch


@dataclass(frozen=True)
class WeightSchedule:
    """Diagonal PSD weight ``Q(t) = diag(alpha_1(t), ..., alpha_l(t))``."""

    diag_fn: Union[Callable, np.ndarray]
    l: int

    @classmethod
    def constant(cls, alphas) -> "WeightSchedule":
        alphas = np.atleast_1d(np.asarray(alphas, dtype=float)).copy()
        if np.any(alphas < 0):
            raise ValueError("weights must be nonnegative")
        alphas.setflags(write=False)
        return cls(alphas, alphas.size)

    @classmethod
    def zero(cls, l: int) -> "WeightSchedule":
        return cls.constant(np.zeros(l))

    def diag(self, t) -> np.ndarray:
        """Diagonal entries at ``t``; shape ``np.shape(t) + (l,)``."""
        t = np.asarray(t, dtype=float)
        if isinstance(self.diag_fn, np.ndarray):
            return np.broadcast_to(self.diag_fn, t.shape + (self.l,))
        d = np.asarray(self.diag_fn(t), dtype=float)
        d = np.broadcast_to(d, t.shape + (self.l,))
        if np.any(d < 0):
            raise ValueError("weight schedule returned a negative diagonal entry")
        return d

    def matrix(self, t: float) -> np.ndarray:
        return np.diag(self.diag(t))

    @property
    def is_zero(self) -> bool:
        return isinstance(self.diag_fn, np.ndarray) and not np.any(self.diag_fn)


def hamiltonian(prob: ProblemDef, x, p, u, lam, t) -> np.ndarray:
    """``H = L + lam^T f``."""
    x, p, u, lam = (np.asarray(a, dtype=float) for a in (x, p, u, lam))
    if lam.shape[-1] != prob.n:
        raise DimensionError("lam", (prob.n,), lam.shape)
    return prob.L(x, u, t) + np.einsum("...i,...i->...", lam, prob.f(x, p, u, t))


def adjoint_rhs(prob: ProblemDef, x, p, u, lam, t):
    """Time derivatives ``(lam', mu')`` of the co-states."""
    x, p, u, lam = (np.asarray(a, dtype=float) for a in (x, p, u, lam))
    if lam.shape[-1] != prob.n:
        raise DimensionError("lam", (prob.n,), lam.shape)
    lam_dot = -np.einsum("...ij,...i->...j", prob.f_x(x, p, u, t), lam) - prob.L_x(x, u, t)
    mu_dot = -np.einsum("...ij,...i->...j", prob.f_p(x, p, u, t), lam)
    return lam_dot, mu_dot


@dataclass(frozen=True, eq=False)
class AugmentedProblem:
    base: ProblemDef
    Q: WeightSchedule

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def l(self) -> int:
        return self.base.l

    @property
    def dim(self) -> int:
        return 2 * (self.base.n + self.base.l)

    @property
    def slices(self) -> dict:
        n, l = self.base.n, self.base.l
        return {
            "x": slice(0, n),
            "p": slice(n, n + l),
            "lam": slice(n + l, 2 * n + l),
            "mu": slice(2 * n + l, 2 * n + 2 * l),
        }

    def split(self, z):
        s = self.slices
        z = np.asarray(z, dtype=float)
        return z[..., s["x"]], z[..., s["p"]], z[..., s["lam"]], z[..., s["mu"]]

    def rhs(self, z, u, t) -> np.ndarray:
        x, p, lam, mu = self.split(z)
        u = np.asarray(u, dtype=float)
        xdot = self.base.f(x, p, u, t)
        lam_dot, mu_dot = adjoint_rhs(self.base, x, p, u, lam, t)
        batch = xdot.shape[:-1]
        return np.concatenate(
            [xdot, np.zeros(batch + (self.l,)),
             np.broadcast_to(lam_dot, batch + (self.n,)),
             np.broadcast_to(mu_dot, batch + (self.l,))],
            axis=-1,
        )

    def running_cost(self, z, u, t) -> np.ndarray:
        x, _, _, mu = self.split(z)
        return self.base.L(x, u, t) + self.sensitivity_integrand(mu, t)

    def sensitivity_integrand(self, mu, t) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return np.einsum("...i,...i,...i->...", mu, self.Q.diag(t), mu)

    def terminal_cost(self, z) -> float:
        return float(self.base.phi(np.asarray(z)[: self.n], self.base.tf))

    def initial_residual(self, z0) -> np.ndarray:
        x, p, _, _ = self.split(z0)
        return np.concatenate([x - self.base.x0, p - self.base.p0])

    def terminal_residual(self, zf) -> np.ndarray:
        """Transversality conditions followed by the terminal constraint."""
        x, _, lam, mu = self.split(zf)
        tf = self.base.tf
        return np.concatenate(
            [lam - np.asarray(self.base.phi_x(x, tf), dtype=float), mu,
             self.base.terminal_residual(x)]
        )

    def linearize(self, z, u, t, mode: str = "analytic-chain", rel_step: float = 1e-6):
        """Batched rhs, cost and their first derivatives.

        Returns ``(F, A, B, ell, ell_z, ell_u)`` with ``A = dF/dz``,
        ``B = dF/du``.  In ``analytic-chain`` mode the user Jacobians are used
        wherever they apply exactly; second derivatives of ``f`` and ``L`` (the
        ``x``/``p``/``u`` dependence of the adjoint rows) and the control
        derivatives come from central differences of the first-derivative
        evaluators.  ``finite-difference`` mode differences the whole rhs.
        """
        base = self.base
        n, l = base.n, base.l
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        P, d, m = z.shape[0], self.dim, base.m
        s = self.slices
        x, p, lam, mu = self.split(z)
        F = self.rhs(z, u, t)
        qd = self.Q.diag(t)
        ell = base.L(x, u, t) + np.einsum("...i,...i,...i->...", mu, qd, mu)
        ell_z = np.zeros((P, d))
        ell_z[:, s["x"]] = base.L_x(x, u, t)
        ell_z[:, s["mu"]] = 2.0 * qd * mu
        A = np.zeros((P, d, d))
        B = np.zeros((P, d, m))

        def steps(v):
            return rel_step * (1.0 + np.abs(v))

        hu = steps(u)
        ell_u = np.empty((P, m))
        for j in range(m):
            e = np.zeros_like(u)
            e[:, j] = hu[:, j]
            ell_u[:, j] = (base.L(x, u + e, t) - base.L(x, u - e, t)) / (2 * hu[:, j])

        if mode == "finite-difference":
            hz = steps(z)
            for j in range(d):
                e = np.zeros_like(z)
                e[:, j] = hz[:, j]
                A[:, :, j] = (self.rhs(z + e, u, t) - self.rhs(z - e, u, t)) / (2 * hz[:, j, None])
            for j in range(m):
                e = np.zeros_like(u)
                e[:, j] = hu[:, j]
                B[:, :, j] = (self.rhs(z, u + e, t) - self.rhs(z, u - e, t)) / (2 * hu[:, j, None])
            return F, A, B, ell, ell_z, ell_u
        if mode != "analytic-chain":
            raise ValueError(f"unknown gradient mode {mode!r}")

        fx = base.f_x(x, p, u, t)
        fp = base.f_p(x, p, u, t)
        A[:, s["x"], s["x"]] = fx
        A[:, s["x"], s["p"]] = fp
        A[:, s["lam"], s["lam"]] = -np.swapaxes(fx, -1, -2)
        A[:, s["mu"], s["lam"]] = -np.swapaxes(fp, -1, -2)

        def costate_rows(xx, pp, uu):
            ld, md = adjoint_rhs(base, xx, pp, uu, lam, t)
            return np.concatenate([np.broadcast_to(ld, (P, n)), np.broadcast_to(md, (P, l))], axis=-1)

        rows = np.r_[np.arange(n + l, 2 * n + l), np.arange(2 * n + l, d)]
        xp = np.concatenate([x, p], axis=-1)
        hxp = steps(xp)
        for j in range(n + l):
            e = np.zeros_like(xp)
            e[:, j] = hxp[:, j]
            plus, minus = xp + e, xp - e
            diff = costate_rows(plus[:, :n], plus[:, n:], u) - costate_rows(minus[:, :n], minus[:, n:], u)
            A[:, rows, j] = diff / (2 * hxp[:, j, None])
        for j in range(m):
            e = np.zeros_like(u)
            e[:, j] = hu[:, j]
            B[:, s["x"], j] = (base.f(x, p, u + e, t) - base.f(x, p, u - e, t)) / (2 * hu[:, j, None])
            B[:, rows, j] = (costate_rows(x, p, u + e) - costate_rows(x, p, u - e)) / (2 * hu[:, j, None])
        return F, A, B, ell, ell_z, ell_u


def build_augmented(prob: ProblemDef, Q: Optional[WeightSchedule] = None, probes: int = 3) -> AugmentedProblem:
    """Assemble the augmented problem and spot-check its rhs against :func:`adjoint_rhs`."""
    Q = WeightSchedule.zero(prob.l) if Q is None else Q
    if Q.l != prob.l:
        raise DimensionError("Q", (prob.l,), (Q.l,))
    aug = AugmentedProblem(prob, Q)
    rng = np.random.default_rng(0)
    for _ in range(probes):
        z = rng.standard_normal(aug.dim)
        z[aug.slices["p"]] += prob.p0
        u = rng.standard_normal(prob.m)
        t = float(rng.uniform(prob.t0, prob.tf))
        x, p, lam, _ = aug.split(z)
        ld, md = adjoint_rhs(prob, x, p, u, lam, t)
        zd = aug.rhs(z, u, t)
        s = aug.slices
        if not (np.allclose(zd[s["lam"]], ld) and np.allclose(zd[s["mu"]], md)
                and np.all(zd[s["p"]] == 0.0)):
            raise AssertionError("augmented rhs disagrees with adjoint_rhs")
    return aug


def _augmented_increments(aug: AugmentedProblem, z_traj: Trajectory, u: ControlSignal, integrand):
    nodes = z_traj.grid.nodes
    Z = z_traj.states
    h = np.diff(nodes)
    tl, tr = nodes[:-1], nodes[1:]
    tm = 0.5 * (tl + tr)
    ul, um, ur = u.at(tl, side="right"), u.at(tm), u.at(tr, side="left")
    Fl = aug.rhs(Z[:-1], ul, tl)
    Fr = aug.rhs(Z[1:], ur, tr)
    Zm = 0.5 * (Z[:-1] + Z[1:]) + (h[:, None] / 8.0) * (Fl - Fr)
    return h / 6.0 * (integrand(Z[:-1], ul, tl) + 4.0 * integrand(Zm, um, tm) + integrand(Z[1:], ur, tr))


def sensitivity_cost(aug: AugmentedProblem, z_traj: Trajectory, u: ControlSignal) -> float:
    """``J_c = int mu^T Q mu dt`` with the same Hermite-Simpson rule as the cost."""
    if z_traj.states.shape[1] != aug.dim:
        raise DimensionError("z_traj", ("N", aug.dim), z_traj.states.shape)
    if z_traj.grid != u.grid:
        raise GridMismatch("trajectory and control must share the grid")
    inc = _augmented_increments(
        aug, z_traj, u, lambda z, uu, t: aug.sensitivity_integrand(aug.split(z)[3], t)
    )
    return float(np.sum(inc))
