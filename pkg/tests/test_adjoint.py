import numpy as np
import pytest
from numpy.testing import assert_allclose

from bmoll.adjoint import assemble_workspace, bsg_opt_direction, bsg_rn_direction, solve_adjoint
from bmoll.core import RngStream, finite_diff_grad, sample_weight_grid
from bmoll.drivers import OptimisticValue, RiskNeutralValue
from bmoll.errors import SingularHessianError
from bmoll.lower import solve_ll_grid_accurate
from bmoll.noise import NoiseSpec
from bmoll.problems import (
    LLObjective,
    make_gkv1_sep,
    make_jos1,
    make_sp1,
    make_spd,
    problem_from_key,
)


def rel_err(a, b):
    a, b = np.atleast_1d(np.asarray(a, float)), np.atleast_1d(np.asarray(b, float))
    return np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b))


class TestSolveAdjoint:
    def test_identity(self):
        g = np.array([1.0, -2.0, 0.5])
        assert_allclose(solve_adjoint(np.eye(3), g), g)

    def test_diagonal(self):
        assert_allclose(solve_adjoint(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])

    def test_random_spd_residual(self):
        H = make_spd(50, RngStream(0))
        g = RngStream(1, 0).generator().standard_normal(50)
        mu = solve_adjoint(H, g)
        assert np.linalg.norm(H @ mu - g) <= 1e-10 * max(1.0, np.linalg.norm(g))

    def test_indefinite_raises(self):
        with pytest.raises(SingularHessianError):
            solve_adjoint(np.diag([1.0, -1.0]), np.ones(2))

    def test_nonsymmetric_rejected(self):
        with pytest.raises(ValueError):
            solve_adjoint(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2))


class TestOptDirection:
    def test_gkv1_hand_values(self):
        # Balanced weights cancel the mixed second derivatives, so the x-block
        # reduces to -grad_x f_u; the weight block is the gradient-row matrix
        # times the adjoint vector.
        p = make_gkv1_sep(1)
        d_x, d_lam = bsg_opt_direction(p, [-1.0], [0.5, 0.5], [0.0])
        assert_allclose(d_x, [-2.0], atol=1e-14)
        assert_allclose(d_lam, [0.25, -0.25], atol=1e-14)

    def test_single_objective_reduces_to_classic_adjoint(self):
        base = make_sp1(2)
        p = base.__class__(
            name="sp1-single", n=2, m=2, q=1, ul_box=base.ul_box,
            f_u=base.f_u, grad_x_fu=base.grad_x_fu, grad_y_fu=base.grad_y_fu,
            ll=(base.ll[0],),
        )
        x, y = np.array([0.5, 1.0]), np.array([0.2, -0.3])
        d_x, d_lam = bsg_opt_direction(p, x, [1.0], y)
        _, gy, hxy, hyy = p.ll_oracle(0, x, y)
        mu = np.linalg.solve(hyy, p.grad_y_fu(x, y))
        assert_allclose(d_x, -(p.grad_x_fu(x, y) - hxy @ mu), atol=1e-12)
        assert_allclose(d_lam, [gy @ mu], atol=1e-12)

    def test_requires_simplex_weight(self):
        p = make_sp1(1)
        with pytest.raises(ValueError):
            bsg_opt_direction(p, [1.0], [0.9, 0.9], [0.0])

    def test_row_structure_locality(self):
        # Bumping objective j's gradient shifts only row j of the weight-block
        # rows in the workspace.
        p = make_sp1(2)
        x, y = np.array([0.5, 1.0]), np.array([0.2, -0.3])
        lam = np.array([0.4, 0.6])
        ws0, _, _ = assemble_workspace(p, x, lam, y)
        bumped = p.ll[1]
        shifted = LLObjective(
            value=bumped.value,
            grad_y=lambda xx, yy: bumped.grad_y(xx, yy) + 1.0,
            hess_xy=bumped.hess_xy,
            hess_yy=bumped.hess_yy,
        )
        p2 = p.__class__(
            name="sp1-bumped", n=2, m=2, q=2, ul_box=p.ul_box,
            f_u=p.f_u, grad_x_fu=p.grad_x_fu, grad_y_fu=p.grad_y_fu,
            ll=(p.ll[0], shifted),
        )
        ws1, _, _ = assemble_workspace(p2, x, lam, y)
        assert_allclose(ws1.lambda_rows[0], ws0.lambda_rows[0])
        assert np.all(ws1.lambda_rows[1] != ws0.lambda_rows[1])

    @pytest.mark.parametrize("maker", [make_jos1, make_sp1, make_gkv1_sep])
    @pytest.mark.parametrize("n_bar", [1, 3])
    def test_matches_finite_differences(self, maker, n_bar):
        p = maker(n_bar)
        gen = RngStream(41, 0).generator()
        ev = OptimisticValue(p, ll_tol=1e-10)
        for _ in range(5):
            x = gen.uniform(0.3, 1.7, p.n)
            lam1 = gen.uniform(0.15, 0.85)
            lam = np.array([lam1, 1.0 - lam1])
            y = p.ll_solution(x, lam)
            d_x, d_lam = bsg_opt_direction(p, x, lam, y)
            fd_x = finite_diff_grad(lambda z: ev(z, lam), x)
            fd_lam = finite_diff_grad(lambda z: ev(x, z), lam)
            assert rel_err(-d_x, fd_x) < 1e-4
            assert rel_err(-d_lam, fd_lam) < 1e-4


class TestRnDirection:
    def test_singleton_batch_matches_opt_x_block(self):
        p = make_gkv1_sep(2)
        gen = RngStream(42, 0).generator()
        x = gen.uniform(-2, 0, 2)
        lam = np.array([0.3, 0.7])
        y = p.ll_solution(x, lam)
        d = bsg_rn_direction(p, x, lam[None, :], y[None, :])
        d_x, _ = bsg_opt_direction(p, x, lam, y)
        assert_allclose(d, d_x, atol=1e-12)

    def test_duplicate_batch_idempotent(self):
        p = make_sp1(2)
        x = np.array([1.0, 0.0])
        lam = np.array([0.6, 0.4])
        y = p.ll_solution(x, lam)
        batch = np.stack([lam, lam])
        Ys = np.stack([y, y])
        d2 = bsg_rn_direction(p, x, batch, Ys)
        d1 = bsg_rn_direction(p, x, lam[None, :], y[None, :])
        assert_allclose(d2, d1, atol=1e-14)

    def test_linearity_over_batch(self):
        p = make_jos1(2)
        gen = RngStream(43, 0).generator()
        x = gen.uniform(0.4, 1.6, 2)
        lam1 = gen.uniform(0.1, 0.9, 6)
        batch = np.stack([lam1, 1 - lam1], axis=1)
        Ys = np.stack([p.ll_solution(x, batch[k]) for k in range(6)])
        d = bsg_rn_direction(p, x, batch, Ys)
        per = np.stack(
            [bsg_rn_direction(p, x, batch[k: k + 1], Ys[k: k + 1]) for k in range(6)]
        )
        assert np.max(np.abs(d - per.mean(axis=0))) <= 1e-14 * max(1.0, np.abs(d).max())

    def test_loop_and_batch_paths_agree(self):
        from bmoll.adjoint import _rn_direction_loop

        p = make_sp1(3)
        gen = RngStream(44, 0).generator()
        x = gen.uniform(-1, 2, 3)
        lam1 = gen.uniform(0.1, 0.9, 5)
        batch = np.stack([lam1, 1 - lam1], axis=1)
        Ys = np.stack([p.ll_solution(x, batch[k]) for k in range(5)])
        d_batch = bsg_rn_direction(p, x, batch, Ys)
        d_loop = _rn_direction_loop(p, x, batch, Ys, NoiseSpec.none())
        assert_allclose(d_batch, d_loop, atol=1e-12)

    def test_full_grid_matches_finite_differences(self):
        p = make_gkv1_sep(1)
        grid = sample_weight_grid(2, 500, RngStream(45))
        gen = RngStream(46, 0).generator()
        ev = RiskNeutralValue(p, grid, ll_tol=1e-10)
        for _ in range(3):
            x = gen.uniform(-2, 0, 1)
            Y = solve_ll_grid_accurate(p, x, grid, np.zeros((500, 1)), tol=1e-10)
            d = bsg_rn_direction(p, x, grid, Y)
            fd = finite_diff_grad(ev, x)
            assert rel_err(-d, fd) < 1e-3

    def test_singular_member_tagged(self):
        # Balanced-curvature failure: at x = 0 the first objective is flat in
        # y, so a vertex weight yields a singular weighted Hessian.
        p = make_jos1(1)
        batch = np.array([[0.5, 0.5], [1.0, 0.0]])
        Ys = np.zeros((2, 1))
        with pytest.raises(SingularHessianError, match="batch index 1"):
            bsg_rn_direction(p, np.array([0.0]), batch, Ys)


class TestNoiseRouting:
    def test_zero_noise_bitwise_deterministic(self):
        p = make_sp1(2)
        x = np.array([1.0, -0.5])
        lam = np.array([0.5, 0.5])
        y = p.ll_solution(x, lam)
        a = bsg_opt_direction(p, x, lam, y, NoiseSpec.none())
        b = bsg_opt_direction(p, x, lam, y, None)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_noisy_direction_reproducible(self):
        p = make_sp1(2)
        x = np.array([1.0, -0.5])
        lam = np.array([0.5, 0.5])
        y = p.ll_solution(x, lam)

        def run(seed):
            noise = NoiseSpec(1.0, 0.1, RngStream(seed, 3))
            return bsg_opt_direction(p, x, lam, y, noise)

        a, b = run(7), run(7)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        c = run(8)
        assert not np.array_equal(a[0], c[0])

    def test_noisy_hessian_estimates_stay_usable(self):
        # The positive-definite safeguard keeps the stochastic adjoint solve
        # well posed across many draws.
        p = problem_from_key("gkv1-nonsep", 5, data_seed=2)
        gen = RngStream(48, 0).generator()
        x = gen.uniform(0, 3, 5)
        lam = np.array([0.5, 0.5])
        y = p.ll_solution(x, lam)
        for k in range(50):
            noise = NoiseSpec(1.0, 0.2, RngStream(k, 3))
            d_x, d_lam = bsg_opt_direction(p, x, lam, y, noise)
            assert np.all(np.isfinite(d_x)) and np.all(np.isfinite(d_lam))
