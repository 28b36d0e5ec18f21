import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bmoll.core import RngStream
from bmoll.errors import DivergenceError
from bmoll.lower import (
    LLBudget,
    solve_ll,
    solve_ll_accurate,
    solve_ll_grid,
    solve_ll_grid_accurate,
    update_accuracy,
    weighted_ll_grad,
)
from bmoll.noise import NoiseSpec
from bmoll.problems import make_gkv1_sep, make_jos1, make_sp1
from bmoll.stepsize import StepsizeRule


def big_budget(iters=2000, rule=None):
    rule = rule or StepsizeRule.armijo()
    return LLBudget(iters, iters, 1.0, rule)


class TestWeightedGrad:
    def test_gkv1_identity_cancellation(self):
        p = make_gkv1_sep(2)
        x = np.array([1.3, -0.4])
        g = weighted_ll_grad(p, x, [0.5, 0.5], np.zeros(2))
        assert_allclose(g, np.zeros(2), atol=1e-15)

    def test_vertex_weight_is_single_objective(self):
        p = make_sp1(2)
        x, y = np.array([1.0, 2.0]), np.array([0.5, -1.0])
        g = weighted_ll_grad(p, x, [1.0, 0.0], y)
        assert_array_equal(g, p.ll[0].grad_y(x, y))

    def test_jos1_stationarity_at_closed_form(self):
        p = make_jos1(1)
        g = weighted_ll_grad(p, [1.0], [0.5, 0.5], [1.0])
        assert_allclose(g, [0.0], atol=1e-15)

    def test_invalid_simplex_rejected(self):
        p = make_sp1(1)
        with pytest.raises(ValueError):
            weighted_ll_grad(p, [1.0], [0.7, 0.7], [0.0])


class TestSolveLL:
    def test_stationary_point_fixed(self):
        p = make_gkv1_sep(2)
        y = solve_ll(p, [1.0, -2.0], [0.5, 0.5], np.zeros(2), big_budget(50))
        assert_allclose(y, np.zeros(2), atol=1e-12)

    def test_sp1_vertex_closed_form(self):
        p = make_sp1(1)
        budget = LLBudget(1000, 1000, 1.0, StepsizeRule.fixed(0.1))
        y = solve_ll(p, [1.0], [0.0, 1.0], np.zeros(1), budget)
        assert_allclose(y, [2.0], atol=1e-6)

    def test_jos1_balanced_weights(self):
        p = make_jos1(1)
        y = solve_ll(p, [1.0], [0.5, 0.5], np.array([0.3]), big_budget())
        assert_allclose(y, [1.0], atol=1e-6)

    def test_iterate_for_iterate_vertex_equivalence(self):
        # A vertex weight reproduces plain gradient descent on that objective.
        p = make_sp1(2)
        x = np.array([0.5, 1.5])
        rule = StepsizeRule.fixed(0.05)
        y_a = np.array([2.0, -1.0])
        y_b = y_a.copy()
        for _ in range(7):
            y_a = solve_ll(p, x, [0.0, 1.0], y_a, LLBudget(1, 30, 1.0, rule))
            y_b = y_b - 0.05 * p.ll[1].grad_y(x, y_b)
            assert_array_equal(y_a, y_b)

    def test_divergent_stepsize_detected(self):
        p = make_sp1(1)
        budget = LLBudget(4000, 4000, 1.0, StepsizeRule.fixed(10.0))
        with pytest.raises(DivergenceError):
            solve_ll(p, [1.0], [0.5, 0.5], np.ones(1), budget)

    def test_early_stop_tolerance_armijo(self):
        # Value-based backtracking bottoms out near sqrt(eps)-level residuals,
        # comfortably below the 1e-6 target.
        p = make_sp1(1)
        y = solve_ll(p, [1.0], [0.5, 0.5], np.zeros(1), big_budget(), tol=1e-6)
        g = weighted_ll_grad(p, [1.0], [0.5, 0.5], y)
        assert np.linalg.norm(g) <= 1e-6

    def test_early_stop_tolerance_fixed(self):
        p = make_sp1(1)
        budget = big_budget(rule=StepsizeRule.fixed(0.1))
        y = solve_ll(p, [1.0], [0.5, 0.5], np.zeros(1), budget, tol=1e-10)
        g = weighted_ll_grad(p, [1.0], [0.5, 0.5], y)
        assert np.linalg.norm(g) <= 1e-10


class TestUpdateAccuracy:
    def test_increments_below_threshold(self):
        b = LLBudget(3, 30, 0.1, StepsizeRule.fixed(0.1))
        assert update_accuracy(b, 1.0, 1.05).current_iters == 4

    def test_unchanged_above_threshold(self):
        b = LLBudget(3, 30, 0.1, StepsizeRule.fixed(0.1))
        assert update_accuracy(b, 1.0, 1.5).current_iters == 3

    def test_capped_at_max(self):
        b = LLBudget(30, 30, 0.1, StepsizeRule.fixed(0.1))
        assert update_accuracy(b, 1.0, 1.0).current_iters == 30

    def test_monotone_over_run(self):
        b = LLBudget(1, 30, 0.5, StepsizeRule.fixed(0.1))
        vals = np.sin(np.arange(40))
        for prev, curr in zip(vals, vals[1:]):
            nb = update_accuracy(b, prev, curr)
            assert nb.current_iters >= b.current_iters
            assert nb.current_iters <= 30
            b = nb

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            LLBudget(0, 30, 0.1, StepsizeRule.fixed(0.1))
        with pytest.raises(ValueError):
            LLBudget(31, 30, 0.1, StepsizeRule.fixed(0.1))


class TestAccurateSolvers:
    @pytest.mark.parametrize("maker", [make_jos1, make_sp1, make_gkv1_sep])
    def test_matches_closed_form(self, maker):
        p = maker(3)
        gen = RngStream(31, 0).generator()
        for _ in range(10):
            x = gen.uniform(0.3, 1.7, 3)
            lam1 = gen.uniform(0.1, 0.9)
            lam = np.array([lam1, 1 - lam1])
            y = solve_ll_accurate(p, x, lam, gen.uniform(-1, 1, 3), tol=1e-10)
            assert_allclose(y, p.ll_solution(x, lam), atol=1e-7)

    def test_grid_matches_single(self):
        p = make_sp1(2)
        gen = RngStream(32, 0).generator()
        x = gen.uniform(-1, 2, 2)
        lam1 = gen.uniform(0.05, 0.95, 8)
        lams = np.stack([lam1, 1 - lam1], axis=1)
        Y = solve_ll_grid_accurate(p, x, lams, np.zeros((8, 2)), tol=1e-10)
        for k in range(8):
            assert_allclose(Y[k], p.ll_solution(x, lams[k]), atol=1e-8)


class TestGridSolver:
    def test_matches_per_point_descent(self):
        p = make_gkv1_sep(2)
        gen = RngStream(33, 0).generator()
        x = gen.uniform(-2, 0, 2)
        lam1 = gen.uniform(0, 1, 6)
        lams = np.stack([lam1, 1 - lam1], axis=1)
        Y0 = gen.uniform(-1, 1, (6, 2))
        rule = StepsizeRule.fixed(0.2)
        Y = solve_ll_grid(p, x, lams, Y0, 5, rule)
        budget = LLBudget(5, 5, 1.0, rule)
        for k in range(6):
            expected = solve_ll(p, x, lams[k], Y0[k], budget)
            assert_allclose(Y[k], expected, atol=1e-13)

    def test_armijo_rows_converge(self):
        p = make_sp1(1)
        lams = np.array([[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])
        Y = solve_ll_grid(p, [1.0], lams, np.zeros((3, 1)), 300, StepsizeRule.armijo())
        assert_allclose(Y[:, 0], [2.0, (1 + 1.5) / 1.5, 1.0], atol=1e-5)

    def test_noise_zero_matches_deterministic(self):
        p = make_sp1(2)
        lams = np.array([[0.3, 0.7], [0.8, 0.2]])
        Y0 = np.ones((2, 2))
        a = solve_ll_grid(p, [0.5, 0.5], lams, Y0, 4, StepsizeRule.fixed(0.1),
                          NoiseSpec.none())
        b = solve_ll_grid(p, [0.5, 0.5], lams, Y0, 4, StepsizeRule.fixed(0.1), None)
        assert_array_equal(a, b)
