import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from cdoc.optim import augmented_lagrangian, lbfgs


def rosenbrock(x):
    f = 100.0 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    g = np.array([-400.0 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200.0 * (x[1] - x[0] ** 2)])
    return f, g


def test_lbfgs_rosenbrock():
    res = lbfgs(rosenbrock, np.array([-1.2, 1.0]), gtol=1e-8, maxiter=500)
    assert res.status == "converged"
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(diag=st.lists(st.floats(0.1, 100.0), min_size=2, max_size=8))
def test_lbfgs_diagonal_quadratic(diag):
    D = np.array(diag)
    b = np.arange(1.0, D.size + 1)
    res = lbfgs(lambda x: (0.5 * x @ (D * x) - b @ x, D * x - b), np.zeros(D.size), gtol=1e-9, maxiter=500)
    assert np.allclose(res.x, b / D, rtol=1e-6, atol=1e-8)


class _Eval:
    """min x0 + x1  s.t.  x0^2 + x1^2 = 2  (solution (-1, -1), multiplier 1/2)."""

    def __init__(self, x):
        self.f = float(x[0] + x[1])
        self.grad = np.ones(2)
        self.c = np.array([x @ x - 2.0])
        self._x = x

    def jt(self, v):
        return 2.0 * self._x * v[0]


def test_augmented_lagrangian_circle():
    res = augmented_lagrangian(_Eval, np.array([0.5, -0.2]), ctol=1e-9, gtol=1e-8, rho0=1.0, memory=5)
    assert res.converged
    assert np.allclose(res.x, [-1.0, -1.0], atol=1e-6)
    assert np.allclose(res.multipliers, [0.5], atol=1e-5)


def test_augmented_lagrangian_reports_best_iterate_on_budget_exhaustion():
    res = augmented_lagrangian(_Eval, np.array([3.0, 2.0]), max_outer=1, max_inner=2)
    assert not res.converged
    assert res.status == "maxouter"
    assert len(res.history) == 1
