import numpy as np
import pytest

from bmoll.stepsize import StepsizeRule, armijo_search


class TestStepsizeRule:
    def test_fixed_positive(self):
        assert StepsizeRule.fixed(0.1).fixed_value == 0.1
        with pytest.raises(ValueError):
            StepsizeRule.fixed(0.0)

    def test_armijo_ranges(self):
        with pytest.raises(ValueError):
            StepsizeRule.armijo(contraction=1.0)
        with pytest.raises(ValueError):
            StepsizeRule.armijo(sufficient_decrease=0.0)

    def test_kind_validation(self):
        with pytest.raises(ValueError):
            StepsizeRule(kind="decaying")


class TestArmijoSearch:
    def test_full_step_accepted(self):
        # f(x) = x^2/2 at x = 1 with d = -1: f(0) = 0 <= 0.5 - 1e-4.
        res = armijo_search(
            lambda z: 0.5 * float(z[0] ** 2), np.array([1.0]), np.array([-1.0]),
            StepsizeRule.armijo(),
        )
        assert res.accepted and res.alpha == 1.0
        assert res.f_new == pytest.approx(0.0)

    def test_zero_direction_flagged(self):
        res = armijo_search(
            lambda z: float(z[0]), np.array([1.0]), np.array([0.0]),
            StepsizeRule.armijo(),
        )
        assert not res.accepted
        assert res.alpha == 1.0

    def test_ascent_direction_returns_smallest_trial(self):
        rule = StepsizeRule.armijo(max_backtracks=10)
        res = armijo_search(
            lambda z: 0.5 * float(z[0] ** 2), np.array([1.0]), np.array([1.0]), rule
        )
        assert not res.accepted
        assert res.alpha == pytest.approx(0.5**9)

    def test_backtracks_once(self):
        # Overshooting direction forces one contraction from the initial trial.
        res = armijo_search(
            lambda z: 2.0 * float(z[0] ** 2), np.array([1.0]), np.array([-2.0]),
            StepsizeRule.armijo(),
        )
        assert res.accepted and res.alpha == 0.5

    def test_f0_reused(self):
        calls = []

        def f(z):
            calls.append(float(z[0]))
            return 0.5 * float(z[0] ** 2)

        res = armijo_search(f, np.array([1.0]), np.array([-1.0]),
                            StepsizeRule.armijo(), f0=0.5)
        assert res.accepted
        assert calls == [0.0]

    def test_nonfinite_raises(self):
        with pytest.raises(FloatingPointError):
            armijo_search(
                lambda z: float("inf") if z[0] < 1 else 1.0,
                np.array([1.0]), np.array([-1.0]), StepsizeRule.armijo(), f0=1.0,
            )

    def test_requires_armijo_rule(self):
        with pytest.raises(ValueError):
            armijo_search(lambda z: 0.0, np.zeros(1), np.ones(1), StepsizeRule.fixed(0.1))
