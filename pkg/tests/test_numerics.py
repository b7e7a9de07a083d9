import numpy as np
import pytest
import scipy.linalg

from ioc.numerics import (
    DEFAULT_RANK_TOL_FACTOR,
    Divergence,
    format_float,
    numerical_rank,
    rank_cutoff,
    rank_tol_factor,
    rk4_linear_propagator,
    simpson_weights,
)


class TestSimpsonWeights:
    def test_integrates_cubic_exactly(self):
        # composite Simpson is exact through degree 3
        t = np.linspace(0.0, 1.0, 11)
        w = simpson_weights(11, t[1] - t[0])
        assert abs(w @ t**3 - 0.25) <= 1e-15

    def test_weights_sum_to_interval_length(self):
        w = simpson_weights(21, 0.5)
        assert abs(w.sum() - 20 * 0.5) <= 1e-12

    def test_pattern(self):
        w = simpson_weights(5, 3.0)
        assert np.allclose(w, np.array([1.0, 4.0, 2.0, 4.0, 1.0]))

    @pytest.mark.parametrize("count", [0, 1, 2, 4, 10])
    def test_rejects_even_or_tiny_counts(self, count):
        with pytest.raises(ValueError):
            simpson_weights(count, 0.1)


class TestRank:
    def test_numerical_rank_default_cutoff(self):
        rank, sv, cut = numerical_rank(np.diag([1.0, 1e-5, 1e-12]))
        assert rank == 2
        assert np.allclose(np.sort(sv)[::-1], sv)
        assert cut == pytest.approx(3 * 1.0 * DEFAULT_RANK_TOL_FACTOR)

    def test_explicit_factor_wins(self):
        rank, _, _ = numerical_rank(np.diag([1.0, 1e-5, 1e-12]), factor=1e-3)
        assert rank == 1

    def test_zero_matrix(self):
        rank, _, cut = numerical_rank(np.zeros((3, 3)))
        assert rank == 0 and cut == 0.0

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("IOC_RANK_TOL", "1e-14")
        assert rank_tol_factor() == 1e-14
        rank, _, _ = numerical_rank(np.diag([1.0, 1e-5, 1e-12]))
        assert rank == 3

    def test_argument_beats_env(self, monkeypatch):
        monkeypatch.setenv("IOC_RANK_TOL", "1e-14")
        assert rank_tol_factor(1e-2) == 1e-2

    def test_default_factor(self, monkeypatch):
        monkeypatch.delenv("IOC_RANK_TOL", raising=False)
        assert rank_tol_factor() == DEFAULT_RANK_TOL_FACTOR

    def test_rank_cutoff_formula(self):
        assert rank_cutoff((4, 7), 2.0, 1e-8) == pytest.approx(7 * 2.0 * 1e-8)


class TestRk4Propagator:
    def test_exact_for_nilpotent(self):
        # A^2 = 0 makes both RK4 and expm finite polynomials: I + hA
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        P = rk4_linear_propagator(A, 0.7)
        assert np.allclose(P, scipy.linalg.expm(0.7 * A), atol=1e-15)

    def test_matches_taylor_degree_4(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((3, 3))
        h = 0.1
        hA = h * A
        expected = (np.eye(3) + hA + hA @ hA / 2 + hA @ hA @ hA / 6
                    + hA @ hA @ hA @ hA / 24)
        assert np.allclose(rk4_linear_propagator(A, h), expected, atol=1e-14)

    def test_global_order_four(self):
        # halving the step must cut the fixed-interval error ~16x
        rng = np.random.default_rng(11)
        A = rng.standard_normal((3, 3))
        A -= (np.abs(np.linalg.eigvals(A).real).max() + 1.0) * np.eye(3)
        exact = scipy.linalg.expm(A)
        errs = []
        for h in (0.05, 0.025):
            steps = round(1.0 / h)
            P = np.linalg.matrix_power(rk4_linear_propagator(A, h), steps)
            errs.append(np.abs(P - exact).max())
        ratio = errs[0] / errs[1]
        assert 8.0 <= ratio <= 32.0


class TestFormatFloat:
    def test_lossless_round_trip(self):
        rng = np.random.default_rng(5)
        values = list(rng.standard_normal(100)) + [1e-300, 1e300, 0.1, np.pi]
        for v in values:
            assert float(format_float(v)) == v

    def test_plain_integers_stay_short(self):
        assert format_float(1.0) == "1"
        assert format_float(-3.0) == "-3"


class TestDivergence:
    def test_carries_time_and_norm(self):
        exc = Divergence("blew up", time=2.5, max_norm=1e13)
        assert exc.time == 2.5 and exc.max_norm == 1e13
        assert isinstance(exc, RuntimeError)
