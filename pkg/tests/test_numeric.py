import numpy as np
import pytest

from icucast.numeric import (
    CholeskyError,
    RngStream,
    cholesky,
    empirical_quantile,
    maximize,
)


class TestMaximize:
    def test_1d_quadratic(self):
        res = maximize(lambda x: -((x[0] - 3.0) ** 2), [0.0])
        assert res.converged
        assert res.argmax[0] == pytest.approx(3.0, abs=1e-4)

    def test_boundary_solution(self):
        res = maximize(lambda x: -(x[0] ** 2), [1.5], bounds=[(1.0, 2.0)])
        assert res.argmax[0] == pytest.approx(1.0, abs=1e-6)

    def test_2d_quadratic_matches_closed_form(self):
        # maximize -(x - m)' A (x - m) with A SPD; argmax is m
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        m = np.array([1.2, -0.7])

        res = maximize(lambda x: -float((x - m) @ A @ (x - m)), [0.0, 0.0])
        assert res.converged
        np.testing.assert_allclose(res.argmax, m, atol=1e-4)

    def test_nonfinite_start_rejected(self):
        with np.errstate(divide="ignore"), pytest.raises(ValueError):
            maximize(lambda x: float(np.log(x[0])), [0.0])

    def test_iteration_cap_reports_nonconvergence(self):
        res = maximize(
            lambda x: -((x[0] - 3.0) ** 2), [1e6], maxiter=1, tol=1e-12
        )
        assert not res.converged

    def test_gradient_small_at_interior_optimum(self):
        res = maximize(lambda x: -((x[0] - 3.0) ** 4 + (x[1] + 1) ** 2), [0.0, 0.0])
        assert res.gradient_norm <= 1e-4


class TestCholesky:
    def test_identity(self):
        np.testing.assert_allclose(cholesky(np.eye(3)), np.eye(3))

    def test_hand_checkable_2x2(self):
        L = cholesky(np.array([[4.0, 2.0], [2.0, 5.0]]))
        np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, 2.0]])

    def test_random_spd_reconstructs(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(5, 5))
        spd = A @ A.T + 5 * np.eye(5)
        L = cholesky(spd)
        np.testing.assert_allclose(L @ L.T, spd, atol=1e-10)

    def test_not_positive_definite(self):
        with pytest.raises(CholeskyError):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_not_symmetric(self):
        with pytest.raises(ValueError):
            cholesky(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestEmpiricalQuantile:
    def test_median_of_1_to_100(self):
        assert empirical_quantile(list(range(1, 101)), 0.5) == pytest.approx(50.5)

    def test_single_element(self):
        assert empirical_quantile([42.0], 0.3) == 42.0

    def test_extremes(self):
        xs = [3.0, 1.0, 2.0]
        assert empirical_quantile(xs, 0.0) == 1.0
        assert empirical_quantile(xs, 1.0) == 3.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            empirical_quantile([], 0.5)


class TestRngStream:
    def test_same_key_same_draws(self):
        a = RngStream(seed=123, stream_id=4).generator().normal(size=10)
        b = RngStream(seed=123, stream_id=4).generator().normal(size=10)
        np.testing.assert_array_equal(a, b)

    def test_different_streams_differ(self):
        a = RngStream(seed=123, stream_id=0).generator().normal(size=10)
        b = RngStream(seed=123, stream_id=1).generator().normal(size=10)
        assert not np.array_equal(a, b)

    def test_substreams_order_independent(self):
        base = RngStream(seed=9)
        forward = [base.substream(k).generator().poisson(10.0) for k in range(5)]
        backward = [
            base.substream(k).generator().poisson(10.0) for k in reversed(range(5))
        ]
        assert forward == list(reversed(backward))
