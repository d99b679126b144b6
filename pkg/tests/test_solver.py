import numpy as np
import pytest

from cdoc.augment import WeightSchedule, build_augmented
from cdoc.core import integrate
from cdoc.problems import get_problem, zermelo
from cdoc.reference import zermelo_shooting
from cdoc.solver import SolverOptions, solve, solve_cdoc, transcribe


@pytest.fixture(scope="module")
def zermelo_nominal():
    return solve_cdoc(get_problem("zermelo"), WeightSchedule.constant([0.0]))


@pytest.mark.parametrize("name, nvars, ncons", [("zermelo", 707, 607), ("lqr-b", 505, 404)])
def test_transcription_counts(name, nvars, ncons):
    tr = transcribe(build_augmented(get_problem(name)), SolverOptions(N=101))
    assert (tr.n_vars, tr.n_constraints) == (nvars, ncons)
    ev = tr.evaluate(tr.initial_guess())
    assert ev.c.size == ncons and ev.grad.size == nvars
    assert ev.jacobian().shape == (ncons, nvars)


def test_two_node_grid_has_one_defect_block():
    tr = transcribe(build_augmented(zermelo()), SolverOptions(N=2))
    assert tr.n_constraints == 6 + 3 + 3 + 1
    assert tr.n_vars == 2 * 7


def test_jacobian_matches_finite_differences():
    tr = transcribe(build_augmented(get_problem("lqr-a-stable"), WeightSchedule.constant([10.0])),
                    SolverOptions(N=7))
    w = tr.initial_guess() + 0.1 * np.random.default_rng(1).standard_normal(tr.n_vars)
    J = tr.evaluate(w).jacobian().toarray()
    h = 1e-6
    fd = np.column_stack([(tr.constraints(w + h * e) - tr.constraints(w - h * e)) / (2 * h)
                          for e in np.eye(tr.n_vars)])
    assert np.max(np.abs(J - fd)) <= 1e-6 * (1 + np.max(np.abs(J)))


def test_cold_start_boundary_data():
    prob = get_problem("lqr-b")
    tr = transcribe(build_augmented(prob), SolverOptions(N=11))
    Z, U = tr.unpack(tr.initial_guess())
    assert np.all(Z[:, 0] == prob.x0[0]) and np.all(Z[:, 1] == prob.p0[0])
    assert np.all(Z[:, 3] == 0.0) and np.all(U == 0.0)


def test_zermelo_without_current():
    sol = solve_cdoc(zermelo(p0=0.0), WeightSchedule.constant([0.0]))
    assert sol.converged
    assert sol.part("x")[-1, 0] == pytest.approx(1.0, abs=1e-3)
    assert sol.J == pytest.approx(-1.0, abs=1e-3)
    assert np.max(np.abs(sol.u.values)) <= 1e-2


def test_zermelo_matches_shooting_oracle(zermelo_nominal):
    ref = zermelo_shooting(10.0)
    assert zermelo_nominal.converged
    assert abs(zermelo_nominal.J - ref.cost) <= 1e-2 * abs(ref.cost)


def test_zermelo_headings_are_wrapped(zermelo_nominal):
    u = zermelo_nominal.u.values
    assert np.all(u > -np.pi) and np.all(u <= np.pi)


def test_collocation_consistent_on_finer_grid(zermelo_nominal):
    prob = get_problem("zermelo")
    fine = prob.grid(10 * (zermelo_nominal.grid.N - 1) + 1)
    x = integrate(prob, prob.x0, zermelo_nominal.u_solved, grid=fine)
    assert np.max(np.abs(x.final - zermelo_nominal.part("x")[-1])) <= 1e-3


def test_transversality_and_costate_backcheck(zermelo_nominal):
    assert np.max(np.abs(zermelo_nominal.part("mu")[-1])) <= 1e-9
    assert zermelo_nominal.costate_check <= 1e-2
    assert zermelo_nominal.residuals["max"] <= 1e-6


def test_warm_start_converges_immediately(zermelo_nominal):
    aug = build_augmented(get_problem("zermelo"), WeightSchedule.constant([0.0]))
    tr = transcribe(aug)
    init = tr.pack(zermelo_nominal.z.states, zermelo_nominal.u_solved.values)
    sol = solve(tr, init)
    assert sol.converged
    assert sol.iterations["outer"] <= 2
    assert sol.J == pytest.approx(zermelo_nominal.J, abs=1e-8)


def test_desensitization_lowers_sensitivity():
    prob = get_problem("lqr-b")
    lo = solve_cdoc(prob, WeightSchedule.constant([0.0]))
    hi = solve_cdoc(prob, WeightSchedule.constant([1000.0]))
    mu2 = [np.sum(s.part("mu") ** 2) for s in (lo, hi)]
    assert hi.J > lo.J and mu2[1] < mu2[0]


@pytest.mark.parametrize("field, value", [("constraint_tol", 0.0), ("N", 1),
                                          ("gradient_mode", "magic"), ("starts", 0),
                                          ("precondition_refresh", 0), ("polish_steps", -1)])
def test_options_validation(field, value):
    with pytest.raises(ValueError):
        SolverOptions(**{field: value})
