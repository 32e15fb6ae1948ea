import math

import numpy as np
import pytest

from rmdn.garch import (GarchFitError, GarchParams, _nll_grad_unconstrained,
                        _unconstrain, fit_garch, garch_filter, garch_nll,
                        simulate_garch)
from rmdn.mixture import LOG_2PI, MixtureStep, nll
from rmdn.network import RmdnConfig, initial_state, params_from_garch, unroll


class TestParams:
    def test_valid(self):
        p = GarchParams(0.0, 0.1, 0.05, 0.1, 0.85)
        assert p.unconditional_variance == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(a0=0, a1=0, alpha0=0.0, alpha1=0.1, beta1=0.8),
            dict(a0=0, a1=0, alpha0=0.1, alpha1=-0.1, beta1=0.8),
            dict(a0=0, a1=0, alpha0=0.1, alpha1=0.1, beta1=-0.1),
            dict(a0=0, a1=0, alpha0=0.1, alpha1=0.5, beta1=0.5),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            GarchParams(**kwargs)


class TestFilter:
    def test_constant_variance_reduction(self):
        p = GarchParams(0.0, 0.0, 0.3, 0.0, 0.0)
        values = np.random.default_rng(0).normal(0, 1, 20)
        _, sigma2 = garch_filter(values, p, init_var=5.0)
        np.testing.assert_allclose(sigma2, 0.3, rtol=1e-14)

    def test_geometric_recursion_closed_form(self):
        # zeros series: e2 terms vanish (presample e2 = population variance = 0),
        # leaving sigma2_t = alpha0*(1 - beta1^t)/(1 - beta1) + beta1^t * v
        alpha0, beta1, v = 0.2, 0.6, 3.0
        p = GarchParams(0.0, 0.0, alpha0, 0.15, beta1)
        _, sigma2 = garch_filter(np.zeros(12), p, init_var=v)
        t = np.arange(1, 13)
        expected = alpha0 * (1 - beta1 ** t) / (1 - beta1) + beta1 ** t * v
        np.testing.assert_allclose(sigma2, expected, rtol=1e-12)

    def test_three_step_hand_recursion(self):
        # r = (1, -1, 2), a0 = a1 = 0: population variance is 14/9, then
        # sigma2_1 = 0.1 + 0.7*14/9, e2 = 1 afterwards
        p = GarchParams(0.0, 0.0, 0.1, 0.2, 0.5)
        values = np.array([1.0, -1.0, 2.0])
        mu, sigma2 = garch_filter(values, p)
        var = 14.0 / 9.0
        s1 = 0.1 + 0.2 * var + 0.5 * var
        s2 = 0.1 + 0.2 * 1.0 + 0.5 * s1
        s3 = 0.1 + 0.2 * 1.0 + 0.5 * s2
        np.testing.assert_allclose(mu, 0.0, atol=1e-15)
        np.testing.assert_allclose(sigma2, [s1, s2, s3], rtol=1e-14)

    def test_ar_mean_uses_lagged_return(self):
        p = GarchParams(0.5, 0.3, 1.0, 0.0, 0.0)
        values = np.array([1.0, 2.0, -1.0])
        mu, _ = garch_filter(values, p)
        np.testing.assert_allclose(mu, [0.5, 0.5 + 0.3, 0.5 + 0.6], rtol=1e-15)

    def test_all_variances_positive(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = GarchParams(0.0, 0.0, float(rng.uniform(0.01, 1)),
                            float(rng.uniform(0, 0.3)), float(rng.uniform(0, 0.6)))
            values = rng.normal(0, 1, 50)
            _, sigma2 = garch_filter(values, p)
            assert np.all(sigma2 > 0)


class TestNll:
    def test_standard_normal_zeros(self):
        p = GarchParams(0.0, 0.0, 1.0, 0.0, 0.0)
        assert garch_nll(np.zeros(10), p) == pytest.approx(10 * 0.5 * LOG_2PI, rel=1e-13)

    def test_matches_mixture_nll_on_filter_steps(self):
        p = GarchParams(0.02, 0.1, 0.05, 0.1, 0.85)
        series = simulate_garch(p, 200, seed=2)
        mu, sigma2 = garch_filter(series, p)
        steps = [MixtureStep([1.0], [m], [s]) for m, s in zip(mu, sigma2)]
        assert garch_nll(series, p) == pytest.approx(nll(series, steps), abs=1e-12)

    def test_matches_nested_network_nll(self):
        p = GarchParams(0.05, 0.1, 1.8, 0.1, 0.8)
        series = simulate_garch(p, 300, seed=3)
        cfg = RmdnConfig(n_components=1, k_hidden=2)
        steps, _ = unroll(series, params_from_garch(p, cfg), cfg,
                          initial_state(series, cfg))
        assert nll(series, steps) == pytest.approx(garch_nll(series, p), rel=1e-8)


class TestFitGradient:
    def test_matches_finite_differences(self):
        p = GarchParams(0.01, 0.05, 0.08, 0.12, 0.8)
        series = simulate_garch(p, 150, seed=4)
        values = series.values
        var = float(np.var(values))
        theta = _unconstrain(p)
        loss, grads = _nll_grad_unconstrained(theta, values, var, var)
        h = 1e-6
        for i in range(5):
            up = theta.copy(); up[i] += h
            down = theta.copy(); down[i] -= h
            fd = (_nll_grad_unconstrained(up, values, var, var)[0]
                  - _nll_grad_unconstrained(down, values, var, var)[0]) / (2 * h)
            assert grads[i] == pytest.approx(fd, rel=1e-6, abs=1e-7), f"coordinate {i}"

    def test_loss_matches_public_nll(self):
        p = GarchParams(0.0, 0.0, 0.05, 0.1, 0.85)
        series = simulate_garch(p, 100, seed=5)
        var = float(np.var(series.values))
        loss, _ = _nll_grad_unconstrained(_unconstrain(p), series.values, var, var)
        assert loss == pytest.approx(garch_nll(series, p), rel=1e-12)


class TestFit:
    def test_simulation_recovery(self):
        true = GarchParams(0.0, 0.0, 0.05, 0.10, 0.85)
        series = simulate_garch(true, 2000, seed=6)
        fitted, loglik = fit_garch(series)
        assert abs((fitted.alpha1 + fitted.beta1) - 0.95) <= 0.1
        assert math.isfinite(loglik)

    def test_iid_data_gives_small_alpha1(self):
        rng = np.random.default_rng(7)
        series = rng.normal(0, 1, 2000)
        fitted, _ = fit_garch(series)
        assert fitted.alpha1 <= 0.05

    def test_mle_dominates_true_parameters(self):
        true = GarchParams(0.0, 0.0, 0.05, 0.10, 0.85)
        series = simulate_garch(true, 1000, seed=8)
        _, loglik = fit_garch(series)
        assert loglik >= -garch_nll(series, true)

    def test_mle_dominates_random_stationary_grid(self):
        true = GarchParams(0.0, 0.1, 0.05, 0.10, 0.85)
        series = simulate_garch(true, 500, seed=9)
        _, loglik = fit_garch(series)
        rng = np.random.default_rng(10)
        for _ in range(100):
            pers = rng.uniform(0.0, 0.99)
            share = rng.uniform(0.0, 1.0)
            p = GarchParams(
                float(rng.normal(0, 0.1)), float(rng.uniform(-0.5, 0.5)),
                float(rng.uniform(0.01, 1.0)), pers * share, pers * (1 - share),
            )
            assert loglik >= -garch_nll(series, p) - 1e-9

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            fit_garch(np.zeros(10) + np.arange(10) * 0.01)

    def test_constant_series_rejected(self):
        with pytest.raises(GarchFitError):
            fit_garch(np.ones(100))

    def test_deterministic(self):
        true = GarchParams(0.0, 0.0, 0.05, 0.10, 0.85)
        series = simulate_garch(true, 500, seed=11)
        a = fit_garch(series)
        b = fit_garch(series)
        assert a[1] == b[1] and a[0] == b[0]


class TestSimulate:
    def test_deterministic(self):
        p = GarchParams(0.0, 0.0, 0.05, 0.1, 0.85)
        a = simulate_garch(p, 100, seed=12)
        b = simulate_garch(p, 100, seed=12)
        np.testing.assert_array_equal(a.values, b.values)

    def test_iid_case_moments(self):
        # alpha1 = beta1 = 0 gives i.i.d. N(0, alpha0) draws
        alpha0 = 0.7
        p = GarchParams(0.0, 0.0, alpha0, 0.0, 0.0)
        series = simulate_garch(p, 10 ** 4, seed=13)
        se_var = math.sqrt(2 * alpha0 ** 2 / 10 ** 4)  # Var(s^2) = 2 sigma^4 / n
        assert abs(float(np.var(series.values)) - alpha0) < 3 * se_var
        assert abs(float(np.mean(series.values))) < 3 * math.sqrt(alpha0 / 10 ** 4)

    def test_long_run_variance(self):
        p = GarchParams(0.0, 0.0, 0.05, 0.10, 0.85)
        series = simulate_garch(p, 10 ** 5, seed=14)
        sample_var = float(np.var(series.values))
        assert abs(sample_var - p.unconditional_variance) / p.unconditional_variance < 0.10

    def test_length_validation(self):
        with pytest.raises(ValueError):
            simulate_garch(GarchParams(0, 0, 0.1, 0.1, 0.8), 0, seed=0)
