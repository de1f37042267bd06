import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exact_pareto_tail, hill_loop
from tailpool.simulation import ModelSpec, marginal_quantile, sample_model
from tailpool.tail import (
    SecondOrderFit,
    SortedSample,
    TailFit,
    default_k,
    hill_estimate,
    lambda_hat,
    second_order_estimate,
    weissman_quantile,
)

E4 = np.exp([0.0, 1.0, 2.0, 3.0])


class TestSortedSample:
    def test_from_values_sorts(self):
        s = SortedSample.from_values([3.0, 1.0, 2.0], "a")
        np.testing.assert_array_equal(s.values, [1.0, 2.0, 3.0])
        assert s.n == 3 and s.origin_id == "a"

    @pytest.mark.parametrize("bad", [[], [1.0, -1.0], [0.0, 1.0], [1.0, np.inf], [1.0, np.nan]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            SortedSample.from_values(bad)

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            SortedSample(np.array([2.0, 1.0]))

    def test_values_are_read_only(self):
        s = SortedSample.from_values([1.0, 2.0])
        with pytest.raises(ValueError):
            s.values[0] = 5.0


class TestHill:
    def test_four_point_k2(self):
        fit = hill_estimate(SortedSample(E4), 2)
        assert fit.gamma_hat == 1.5
        assert fit.threshold == pytest.approx(math.e, rel=1e-15)
        assert fit.k == 2 and fit.n == 4

    def test_four_point_k1(self):
        assert hill_estimate(SortedSample(E4), 1).gamma_hat == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("k", [1, 5, 9])
    def test_ties_give_zero(self, k):
        assert hill_estimate(SortedSample(np.full(10, 3.7)), k).gamma_hat == 0.0

    @pytest.mark.parametrize("k", [0, 4, -1])
    def test_k_out_of_range(self, k):
        with pytest.raises(ValueError):
            hill_estimate(SortedSample(E4), k)

    def test_default_k(self):
        assert default_k(10_000) == math.floor(10_000**0.7)
        assert default_k(2) == 1

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(0.01, 1e6, allow_nan=False), min_size=3, max_size=60),
        st.floats(0.001, 1000.0),
        st.data(),
    )
    def test_matches_loop_and_scale_invariant(self, xs, c, data):
        k = data.draw(st.integers(1, len(xs) - 1))
        s = SortedSample.from_values(xs)
        g = hill_estimate(s, k).gamma_hat
        assert g == pytest.approx(hill_loop(xs, k), abs=1e-9)
        g_scaled = hill_estimate(SortedSample.from_values(np.asarray(xs) * c), k).gamma_hat
        assert g_scaled == pytest.approx(g, abs=1e-9)
        assert g >= 0

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.1, 3.0), st.integers(2, 40), st.integers(0, 10_000))
    def test_mean_of_scaled_spacings(self, gamma, k, seed):
        # with spacings s_i = log X[n-i+1] - log X[n-i], Hill equals mean(i * s_i)
        rng = np.random.default_rng(seed)
        s = gamma * rng.exponential(size=k) / np.arange(1, k + 1)
        logs_desc = np.concatenate([np.cumsum(s[::-1])[::-1], [0.0]])
        values = np.exp(logs_desc[::-1])
        expected = float(np.mean(np.arange(1, k + 1) * s))
        assert hill_estimate(SortedSample(values), k).gamma_hat == pytest.approx(expected, rel=1e-10)

    @pytest.mark.slow
    def test_frechet_monte_carlo_mean(self):
        spec = ModelSpec("frechet", (10_000,))
        est = [
            hill_estimate(SortedSample.from_values(sample_model(spec, 100 + r)[0]), 500).gamma_hat
            for r in range(1000)
        ]
        assert abs(np.mean(est) - 1.0) < 0.05


class TestWeissman:
    def test_gamma_zero_returns_threshold(self):
        fit = TailFit(gamma_hat=0.0, k=10, threshold=4.2, n=100)
        for p in (0.001, 0.05, 0.099):
            assert weissman_quantile(fit, p) == pytest.approx(4.2, rel=1e-15)

    def test_square_root_example(self):
        fit = TailFit(gamma_hat=0.5, k=100, threshold=3.0, n=1000)
        assert weissman_quantile(fit, 0.001) == pytest.approx(30.0, rel=1e-14)

    def test_gamma_override(self):
        fit = TailFit(gamma_hat=0.5, k=100, threshold=3.0, n=1000)
        assert weissman_quantile(fit, 0.001, gamma_override=1.0) == pytest.approx(300.0, rel=1e-14)

    @pytest.mark.parametrize("p", [0.0, 0.1, 0.5, -0.01])
    def test_p_out_of_range(self, p):
        with pytest.raises(ValueError):
            weissman_quantile(TailFit(1.0, 100, 3.0, 1000), p)

    def test_decreasing_in_p(self):
        fit = TailFit(0.7, 100, 3.0, 1000)
        qs = [weissman_quantile(fit, p) for p in np.linspace(1e-5, 0.099, 50)]
        assert np.all(np.diff(qs) < 0)

    def test_scale_equivariance(self):
        x = sample_model(ModelSpec("burr", (500,), rho=-1.0), 3)[0]
        q = weissman_quantile(hill_estimate(SortedSample.from_values(x), 50), 0.001)
        q7 = weissman_quantile(hill_estimate(SortedSample.from_values(7 * x), 50), 0.001)
        assert q7 == pytest.approx(7 * q, rel=1e-12)

    @pytest.mark.slow
    def test_pareto_median_near_truth(self):
        n = 2000
        spec = ModelSpec("pareto", (n,))
        qs = [
            weissman_quantile(hill_estimate(SortedSample.from_values(sample_model(spec, r)[0]), 100), 1.0 / n)
            for r in range(500)
        ]
        assert abs(np.median(qs) / n - 1.0) < 0.15


class TestSecondOrder:
    def test_exact_pareto_is_degenerate(self):
        fit = second_order_estimate(SortedSample(exact_pareto_tail(1.0, 200)))
        assert fit.degenerate and fit.rho_hat == 0.0 and fit.beta_hat == 0.0

    def test_reference_fixture(self):
        # frozen from a pure-python evaluation of the moment ratios
        x = np.sort([1.0 / (1.0 - i / 101) - 1.0 for i in range(1, 101)])
        fit = second_order_estimate(SortedSample(x))
        assert fit.k_second == 97
        assert fit.rho_hat == pytest.approx(-0.8091891336833383, abs=1e-10)
        assert fit.beta_hat == pytest.approx(0.9893214111954763, abs=1e-10)

    def test_small_sample_rejected(self):
        with pytest.raises(ValueError):
            second_order_estimate(SortedSample.from_values(np.arange(1.0, 40.0)))

    @pytest.mark.parametrize("tuning", [0.0, 1.0])
    def test_rho_nonpositive_and_finite(self, tuning):
        for seed in range(5):
            x = sample_model(ModelSpec("frechet", (400,)), seed)[0]
            fit = second_order_estimate(SortedSample.from_values(x), tuning)
            assert -20.0 <= fit.rho_hat <= 0.0
            assert math.isfinite(fit.beta_hat)

    @pytest.mark.slow
    def test_burr_rho_median(self):
        spec = ModelSpec("burr", (10_000,), rho=-1.0)
        rhos = [second_order_estimate(SortedSample.from_values(sample_model(spec, r)[0])).rho_hat for r in range(100)]
        assert -1.4 <= np.median(rhos) <= -0.7


class TestLambdaHat:
    def test_zero_beta(self):
        assert lambda_hat(1.0, SecondOrderFit(-1.0, 0.0, 10), 1000, 100) == 0.0

    def test_rho_zero(self):
        assert lambda_hat(1.0, SecondOrderFit(0.0, 0.2, 10), 1000, 100) == pytest.approx(2.0, rel=1e-15)

    def test_direct_arithmetic(self):
        assert lambda_hat(1.0, SecondOrderFit(-1.0, 1.0, 10), 10_000, 100) == pytest.approx(0.1, rel=1e-15)

    def test_precondition(self):
        with pytest.raises(ValueError):
            lambda_hat(1.0, SecondOrderFit(-1.0, 1.0, 10), 100, 100)


def test_burr_quantile_consistent_with_sampler():
    spec = ModelSpec("burr", (10,), gamma=1.0, rho=-1.0)
    assert marginal_quantile(spec, 0.99) == pytest.approx(99.0, rel=1e-12)
