"""Independent reference solutions for the shipped problems, computed with
adaptive scipy integrators rather than the collocation machinery.

* Scalar LQR: backward integration of the Riccati equation
  ``P' = -2 a P - R1 + P^2 b^2 / R2``, ``P(tf) = 0``; optimal cost
  ``P(t0) x0^2 / 2``.
* Zermelo (nominal, no desensitization): indirect shooting.  The heading
  co-state is affine in time, ``lam2(t) = nu + p (t - tf)``, and the
  minimising heading is ``u = -atan(lam2)``; ``nu`` is found by bracketing the
  terminal constraint ``x2(tf) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq


@dataclass(frozen=True)
class LqrReference:
    cost: float
    times: np.ndarray
    riccati: np.ndarray

    def gain(self, t, b: float, R2: float) -> np.ndarray:
        return np.interp(t, self.times, self.riccati) * b / R2


def lqr_riccati(a: float, b: float, R1: float = 2.0, R2: float = 2.0, tf: float = 20.0,
                x0: float = 1.0, t0: float = 0.0) -> LqrReference:
    sol = solve_ivp(
        lambda t, P: -2.0 * a * P - R1 + P ** 2 * b ** 2 / R2,
        (tf, t0), [0.0], rtol=1e-12, atol=1e-14, dense_output=True,
    )
    times = np.linspace(t0, tf, 2001)
    P = sol.sol(times)[0]
    return LqrReference(0.5 * float(P[0]) * x0 ** 2, times, P)


@dataclass(frozen=True)
class ZermeloReference:
    nu: float
    x1_final: float
    cost: float

    def heading(self, t, p0: float, tf: float = 1.0) -> np.ndarray:
        return -np.arctan(self.nu + p0 * (np.asarray(t, dtype=float) - tf))


def _zermelo_final(nu: float, p0: float, tf: float) -> np.ndarray:
    def rhs(t, x):
        u = -np.arctan(nu + p0 * (t - tf))
        return [np.cos(u) + p0 * x[1], np.sin(u)]

    sol = solve_ivp(rhs, (0.0, tf), [0.0, 0.0], rtol=1e-12, atol=1e-12)
    return sol.y[:, -1]


def zermelo_shooting(p0: float = 10.0, tf: float = 1.0, bracket: float = 50.0,
                     samples: int = 201) -> ZermeloReference:
    """Best root of ``x2(tf; nu) = 0`` over a scan of ``[-bracket, bracket]``.

    Every sign change of the scan is refined with Brent's method and the root
    with the largest ``x1(tf)`` (lowest cost) is returned.
    """
    grid = np.linspace(-bracket, bracket, samples)
    x2 = np.array([_zermelo_final(nu, p0, tf)[1] for nu in grid])
    best = None
    for lo, hi, f_lo, f_hi in zip(grid[:-1], grid[1:], x2[:-1], x2[1:]):
        if f_lo == 0.0:
            root = lo
        elif f_lo * f_hi < 0:
            root = brentq(lambda v: _zermelo_final(v, p0, tf)[1], lo, hi, xtol=1e-13)
        else:
            continue
        x1 = float(_zermelo_final(root, p0, tf)[0])
        if best is None or x1 > best.x1_final:
            best = ZermeloReference(float(root), x1, -x1)
    if best is None:
        raise RuntimeError("no shooting root in the scanned bracket")
    return best
