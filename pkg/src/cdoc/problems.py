"""Built-in problems: Zermelo navigation with a linear shear current, and a
scalar LQR with one uncertain coefficient.

All evaluators broadcast over leading axes.
"""

from __future__ import annotations

import numpy as np

from .core import ControlSignal, ProblemDef, TimeGrid


def _batch(*arrays):
    return np.broadcast_shapes(*arrays)


def _zermelo_probes(grid: TimeGrid) -> list:
    """Admissible non-optimal headings: odd about ``tf / 2``, so ``x2(tf) = 0``
    holds exactly on a symmetric grid."""
    t = grid.nodes
    s = (t - grid.t0) / (grid.tf - grid.t0)
    shapes = [
        0.3 * np.sin(2 * np.pi * s),
        -0.7 * np.sin(2 * np.pi * s),
        1.2 * np.sin(2 * np.pi * s),
        0.8 * (s - 0.5),
        -1.5 * (s - 0.5) ** 3 - 0.4 * np.sin(4 * np.pi * s),
    ]
    return [ControlSignal(grid, v[:, None]) for v in shapes]


def _lqr_probes(grid: TimeGrid) -> list:
    t = grid.nodes
    shapes = [
        np.sin(t),
        0.5 * np.cos(0.3 * t),
        np.full_like(t, -0.2),
        -0.6 * np.exp(-0.5 * t),
        0.1 * t * np.exp(-0.2 * t) - 0.3,
    ]
    return [ControlSignal(grid, v[:, None]) for v in shapes]


def zermelo(p0: float = 10.0, tf: float = 1.0) -> ProblemDef:
    """Maximise downstream range ``x1(tf)`` across a current ``p * x2``.

    Dynamics ``x1' = cos u + p x2``, ``x2' = sin u`` from the origin, with
    ``x2(tf) = 0`` and cost ``-x1(tf)``.  The heading ``u`` is unbounded.
    """

    def f(x, p, u, t):
        return np.stack(
            np.broadcast_arrays(np.cos(u[..., 0]) + p[..., 0] * x[..., 1], np.sin(u[..., 0])),
            axis=-1,
        )

    def f_x(x, p, u, t):
        shape = _batch(x.shape[:-1], p.shape[:-1], u.shape[:-1], np.shape(t))
        J = np.zeros(shape + (2, 2))
        J[..., 0, 1] = p[..., 0]
        return J

    def f_p(x, p, u, t):
        shape = _batch(x.shape[:-1], p.shape[:-1], u.shape[:-1], np.shape(t))
        J = np.zeros(shape + (2, 1))
        J[..., 0, 0] = x[..., 1]
        return J

    def L(x, u, t):
        return np.zeros(_batch(x.shape[:-1], u.shape[:-1], np.shape(t)))

    def L_x(x, u, t):
        return np.zeros(_batch(x.shape[:-1], u.shape[:-1], np.shape(t)) + (2,))

    return ProblemDef(
        n=2, m=1, l=1, t0=0.0, tf=tf,
        x0=[0.0, 0.0], p0=[p0],
        f=f, f_x=f_x, f_p=f_p, L=L, L_x=L_x,
        phi=lambda xf, tf: -float(xf[0]),
        phi_x=lambda xf, tf: np.array([-1.0, 0.0]),
        psi=lambda xf, tf: np.array([xf[1]]),
        psi_x=lambda xf, tf: np.array([[0.0, 1.0]]),
        k=1,
        name="zermelo",
        meta={"p0": p0, "tf": tf, "wrap_control": True, "probe_controls": _zermelo_probes},
    )


def scalar_lqr(
    a0: float = -1.0,
    b0: float = 1.0,
    uncertain: str = "b",
    R1: float = 2.0,
    R2: float = 2.0,
    tf: float = 20.0,
    x0: float = 1.0,
) -> ProblemDef:
    """``x' = a x + b u`` with cost ``int 1/2 (R1 x^2 + R2 u^2) dt``.

    ``uncertain`` picks which coefficient is the parameter; the other one is
    frozen at its nominal value.
    """
    if uncertain not in ("a", "b"):
        raise ValueError("uncertain must be 'a' or 'b'")

    if uncertain == "a":
        def coeffs(p):
            return p[..., 0], b0

        def f_p(x, p, u, t):
            return np.broadcast_to(x[..., None], _batch(x.shape, p.shape, u.shape) + (1,)).copy()
    else:
        def coeffs(p):
            return a0, p[..., 0]

        def f_p(x, p, u, t):
            return np.broadcast_to(u[..., None], _batch(x.shape, p.shape, u.shape) + (1,)).copy()

    def f(x, p, u, t):
        a, b = coeffs(p)
        return np.asarray(a * x[..., 0] + b * u[..., 0])[..., None]

    def f_x(x, p, u, t):
        a, _ = coeffs(p)
        shape = _batch(x.shape[:-1], p.shape[:-1], u.shape[:-1])
        return np.broadcast_to(np.asarray(a, dtype=float)[..., None, None], shape + (1, 1)).copy()

    def L(x, u, t):
        return 0.5 * (R1 * x[..., 0] ** 2 + R2 * u[..., 0] ** 2)

    def L_x(x, u, t):
        return np.broadcast_to(R1 * x, _batch(x.shape, u.shape)).copy()

    p0 = a0 if uncertain == "a" else b0
    return ProblemDef(
        n=1, m=1, l=1, t0=0.0, tf=tf,
        x0=[x0], p0=[p0],
        f=f, f_x=f_x, f_p=f_p, L=L, L_x=L_x,
        phi=lambda xf, tf: 0.0,
        phi_x=lambda xf, tf: np.zeros(1),
        name=f"lqr-{uncertain}",
        meta={"a0": a0, "b0": b0, "uncertain": uncertain, "R1": R1, "R2": R2,
              "tf": tf, "x0": x0, "probe_controls": _lqr_probes},
    )


# name -> (constructor, default kwargs, Monte-Carlo fraction used in the study)
REGISTRY = {
    "zermelo": (zermelo, {"p0": 10.0}, 0.1),
    "lqr-b": (scalar_lqr, {"a0": -1.0, "b0": 1.0, "uncertain": "b"}, 0.2),
    "lqr-a-stable": (scalar_lqr, {"a0": -1.0, "b0": 1.0, "uncertain": "a"}, 0.2),
    "lqr-a-unstable": (scalar_lqr, {"a0": 0.1, "b0": 1.0, "uncertain": "a"}, 0.2),
    "lqr-a-marginal": (scalar_lqr, {"a0": 0.0, "b0": 1.0, "uncertain": "a"}, 0.2),
}


def get_problem(name: str, **overrides) -> ProblemDef:
    try:
        ctor, defaults, _ = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(REGISTRY)}") from None
    kwargs = {**defaults, **overrides}
    prob = ctor(**kwargs)
    object.__setattr__(prob, "name", name)
    return prob


def default_fraction(name: str) -> float:
    return REGISTRY[name][2]
