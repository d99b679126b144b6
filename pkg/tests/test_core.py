import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdoc.core import (
    ControlSignal,
    DimensionError,
    GridMismatch,
    IntegrationDiverged,
    ProblemDef,
    TimeGrid,
    Trajectory,
    cost_to_go,
    eval_cost,
    integrate,
    validate_jacobians,
)
from cdoc.problems import get_problem, scalar_lqr, zermelo

from helpers import decay, still


def test_zero_dynamics_keep_initial_state():
    prob = still()
    traj = integrate(prob, prob.x0, ControlSignal.constant(prob.grid(11), 0.0))
    assert np.all(traj.states == 0.3)


def test_exponential_decay_matches_closed_form():
    prob = decay()
    traj = integrate(prob, prob.x0, ControlSignal.constant(prob.grid(101), 0.0))
    assert abs(traj.final[0] - np.exp(-1.0)) <= 1e-6


@settings(max_examples=10, deadline=None)
@given(N=st.integers(min_value=11, max_value=41), rate=st.floats(0.5, 3.0))
def test_rk4_is_fourth_order(N, rate):
    prob = decay(tf=rate)
    exact = np.exp(-rate)
    errs = []
    for nodes in (N, 2 * N - 1):
        u = ControlSignal.constant(prob.grid(nodes), 0.0)
        errs.append(abs(integrate(prob, prob.x0, u).final[0] - exact))
    assert 12.0 <= errs[0] / errs[1] <= 20.0


def test_divergence_reports_node():
    prob = ProblemDef(
        n=1, m=1, l=1, t0=0.0, tf=1.0, x0=[1.0], p0=[0.0],
        f=lambda x, p, u, t: x ** 3 * 1e3,
        f_x=lambda x, p, u, t: 3e3 * x[..., None] ** 2,
        f_p=lambda x, p, u, t: np.zeros(np.shape(x) + (1,)),
        L=lambda x, u, t: np.zeros(np.shape(x)[:-1]),
        L_x=lambda x, u, t: np.zeros(np.shape(x)),
        phi=lambda xf, tf: 0.0, phi_x=lambda xf, tf: np.zeros(1),
    )
    with np.errstate(all="ignore"), pytest.raises(IntegrationDiverged) as info:
        integrate(prob, prob.x0, ControlSignal.constant(prob.grid(11), 0.0))
    assert 1 <= info.value.node <= 10


def test_zermelo_idle_control_cost():
    prob = zermelo()
    u = ControlSignal.constant(prob.grid(101), 0.0)
    traj = integrate(prob, prob.x0, u)
    assert np.allclose(traj.final, [1.0, 0.0], atol=1e-12)
    assert eval_cost(prob, traj, u) == pytest.approx(-1.0, abs=1e-12)


def test_zero_everything_costs_nothing():
    prob = still()
    grid = prob.grid(5)
    u = ControlSignal.constant(grid, 0.0)
    assert eval_cost(prob, Trajectory(grid, np.zeros(5)), u) == 0.0


def test_cost_to_go_boundaries_and_lqr_tail():
    prob = get_problem("lqr-b")
    u = ControlSignal.constant(prob.grid(1001), 0.0)
    traj = integrate(prob, prob.x0, u)
    assert cost_to_go(prob, traj, u, prob.t0) == pytest.approx(eval_cost(prob, traj, u), abs=1e-14)
    assert cost_to_go(prob, traj, u, prob.tf) == 0.0
    exact = (np.exp(-20.0) - np.exp(-40.0)) / 2.0
    assert abs(cost_to_go(prob, traj, u, 10.0) - exact) <= 1e-6


def test_cost_to_go_rejects_off_grid_time():
    prob = get_problem("lqr-b")
    u = ControlSignal.constant(prob.grid(11), 0.0)
    traj = integrate(prob, prob.x0, u)
    with pytest.raises(GridMismatch):
        cost_to_go(prob, traj, u, 1.234)


def test_eval_cost_rejects_grid_mismatch():
    prob = get_problem("lqr-b")
    u = ControlSignal.constant(prob.grid(11), 0.0)
    traj = integrate(prob, prob.x0, ControlSignal.constant(prob.grid(21), 0.0))
    with pytest.raises(GridMismatch):
        eval_cost(prob, traj, u)


def test_jacobian_check_exact_linear_case():
    rep = validate_jacobians(decay())
    assert rep.passed
    assert max(rep.max_rel_error.values()) < 1e-8


def test_jacobian_check_zermelo_and_injected_fault():
    good = zermelo()
    assert validate_jacobians(good).passed
    bad = ProblemDef(**{**{k: getattr(good, k) for k in (
        "n", "m", "l", "t0", "tf", "x0", "p0", "f", "f_x", "L", "L_x", "phi", "phi_x",
        "psi", "k", "psi_x")}, "f_p": lambda x, p, u, t: np.zeros(np.shape(x) + (1,))})
    rep = validate_jacobians(bad)
    assert not rep.passed
    assert "f_p" in rep.failing


def test_shape_errors_name_the_evaluator():
    with pytest.raises(DimensionError, match="f_x"):
        ProblemDef(
            n=2, m=1, l=1, t0=0.0, tf=1.0, x0=[0, 0], p0=[1.0],
            f=lambda x, p, u, t: np.zeros(np.shape(x)),
            f_x=lambda x, p, u, t: np.zeros(np.shape(x)),
            f_p=lambda x, p, u, t: np.zeros(np.shape(x) + (1,)),
            L=lambda x, u, t: np.zeros(np.shape(x)[:-1]),
            L_x=lambda x, u, t: np.zeros(np.shape(x)),
            phi=lambda xf, tf: 0.0, phi_x=lambda xf, tf: np.zeros(2),
        )


def test_zero_order_hold_left_limit():
    grid = TimeGrid.uniform(0.0, 1.0, 3)
    u = ControlSignal(grid, [1.0, 2.0, 3.0], interp="zoh")
    assert u.at(0.5)[0] == 2.0
    assert u.at(0.5, side="left")[0] == 1.0
    assert u.at(0.25)[0] == 1.0


def test_lqr_variants_have_scalar_shapes():
    for uncertain in ("a", "b"):
        prob = scalar_lqr(uncertain=uncertain)
        assert (prob.n, prob.m, prob.l, prob.k) == (1, 1, 1, 0)
