import numpy as np
import pytest

from rmdn.garch import GarchParams, simulate_garch
from rmdn.gradients import (apply_mask, finite_diff_check, flatten_params,
                            gradient, n_trainable, nonlinear_node_mask,
                            unflatten_params)
from rmdn.network import (RecurrentState, RmdnConfig, init_params,
                          initial_state, unroll)

PROBE = GarchParams(0.0, 0.0, 0.05, 0.10, 0.85)


class TestFlattening:
    @pytest.mark.parametrize("n,k", [(1, 1), (1, 3), (2, 2), (3, 3)])
    def test_round_trip(self, n, k):
        cfg = RmdnConfig(n_components=n, k_hidden=k)
        p = init_params(cfg, 5, "plain")
        theta = flatten_params(p, cfg)
        assert theta.size == n_trainable(cfg)
        q = unflatten_params(theta, cfg)
        for name in ("mix_in_w", "mix_out_w", "mean_out_b", "var_in_b", "var_out_w"):
            np.testing.assert_array_equal(getattr(q, name), getattr(p, name))

    def test_unflatten_restores_pinned(self):
        cfg = RmdnConfig()
        theta = np.zeros(n_trainable(cfg))
        p = unflatten_params(theta, cfg)
        assert p.mix_in_w[0] == 1.0 and p.var_in_w[cfg.k_hidden] == 1.0

    def test_wrong_length_rejected(self):
        cfg = RmdnConfig()
        with pytest.raises(ValueError):
            unflatten_params(np.zeros(n_trainable(cfg) + 1), cfg)


class TestMask:
    def test_all_true_gives_zero_vector(self):
        g = np.arange(1.0, 6.0)
        out = apply_mask(g, np.ones(5, dtype=bool))
        assert np.all(out == 0.0)

    def test_all_false_is_identity(self):
        g = np.arange(1.0, 6.0)
        np.testing.assert_array_equal(apply_mask(g, np.zeros(5, dtype=bool)), g)

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            apply_mask(np.zeros(4), np.zeros(5, dtype=bool))

    def test_masked_entries_exactly_zero(self):
        cfg = RmdnConfig()
        mask = nonlinear_node_mask(cfg)
        g = np.random.default_rng(0).normal(0, 1, mask.size)
        out = apply_mask(g, mask)
        assert np.all(out[mask] == 0.0)
        np.testing.assert_array_equal(out[~mask], g[~mask])

    def test_mask_covers_exactly_the_tanh_parameters(self):
        cfg = RmdnConfig(n_components=2, k_hidden=3)
        mask = nonlinear_node_mask(cfg)
        # view the mask in parameter shape: pinned slots read as 0 (unmasked)
        m = unflatten_params(mask.astype(float), cfg, pinned=False)
        k = cfg.k_hidden
        assert np.all(m.mix_in_w[1:] == 1) and np.all(m.mix_in_b[1:] == 1)
        assert np.all(m.mix_out_w[:, 1:] == 1) and np.all(m.mix_out_w[:, 0] == 0)
        assert np.all(m.mix_out_b == 0)
        assert np.all(m.mean_out_w[:, 1:] == 1) and np.all(m.mean_out_b == 0)
        assert np.all(m.var_out_w[:, 1:k] == 1) and np.all(m.var_out_w[:, k + 1:] == 1)
        assert m.var_out_w[:, 0].sum() == 0 and m.var_out_w[:, k].sum() == 0
        assert np.all(m.var_out_b == 0)

    def test_idempotent(self):
        cfg = RmdnConfig()
        mask = nonlinear_node_mask(cfg)
        g = np.random.default_rng(1).normal(0, 1, mask.size)
        once = apply_mask(g, mask)
        np.testing.assert_array_equal(apply_mask(once, mask), once)


class TestGradient:
    def test_single_gaussian_analytic_score(self):
        """All-linear N=1 model, T=1: d nll / d v0 = (mu - r) / sigma2 and the
        variance-side entries follow the closed-form Gaussian score."""
        cfg = RmdnConfig(n_components=1, k_hidden=1)
        p = init_params(cfg, 3, "pretrain")
        r = 0.8
        init = RecurrentState([1.5], 2.0)
        steps, _ = unroll([r], p, cfg, init)
        mu, s2 = float(steps[0].mu[0]), float(steps[0].sigma2[0])
        _, grads = gradient([r], p, cfg, init)
        g = unflatten_params(grads, cfg, pinned=False)
        assert g.mean_out_b[0] == pytest.approx((mu - r) / s2, rel=1e-12)
        # variance output bias: d nll / d sigma2 * dpelu, with positive branch
        dl_ds2 = 0.5 / s2 * (1.0 - (r - mu) ** 2 / s2)
        assert g.var_out_b[0] == pytest.approx(dl_ds2, rel=1e-12)

    def test_loss_matches_unroll_nll(self):
        from rmdn.mixture import nll

        cfg = RmdnConfig()
        series = simulate_garch(PROBE, 50, seed=4)
        p = init_params(cfg, 5, "plain")
        init = initial_state(series, cfg)
        loss, _ = gradient(series, p, cfg, init)
        steps, _ = unroll(series, p, cfg, init)
        assert loss == pytest.approx(nll(series, steps), rel=1e-12)

    @pytest.mark.parametrize("n,k,scheme", [
        (1, 1, "plain"), (1, 3, "plain"), (2, 2, "plain"),
        (3, 3, "plain"), (2, 3, "pretrain"),
    ])
    def test_finite_difference_agreement(self, n, k, scheme):
        cfg = RmdnConfig(n_components=n, k_hidden=k)
        series = simulate_garch(PROBE, 20, seed=n * 10 + k)
        p = init_params(cfg, n + k, scheme)
        report = finite_diff_check(series, p, cfg, initial_state(series, cfg))
        assert report.passed, f"max deviation {report.max_deviation:.2e}"

    def test_pretrain_init_gradient_vanishes_on_tanh_parameters(self):
        """With tanh nodes zeroed, their raw gradients are already zero, and
        the surviving support is exactly the linear-node and bias set."""
        cfg = RmdnConfig(n_components=2, k_hidden=3)
        series = simulate_garch(PROBE, 60, seed=6)
        p = init_params(cfg, 7, "pretrain")
        _, grads = gradient(series, p, cfg, initial_state(series, cfg))
        mask = nonlinear_node_mask(cfg)
        masked_part = grads[mask]
        # input weights/biases of tanh nodes get gradient 0 only through the
        # zeroed output weights; output weights see tanh(0) = 0 activations
        assert np.all(masked_part == 0.0)
        assert np.any(grads[~mask] != 0.0)

    def test_pretrain_init_matches_reduced_model_on_shared_coordinates(self):
        series = simulate_garch(PROBE, 60, seed=8)
        cfg3 = RmdnConfig(n_components=2, k_hidden=3)
        cfg1 = RmdnConfig(n_components=2, k_hidden=1)
        _, g3 = gradient(series, init_params(cfg3, 9, "pretrain"), cfg3,
                         initial_state(series, cfg3))
        _, g1 = gradient(series, init_params(cfg1, 9, "pretrain"), cfg1,
                         initial_state(series, cfg1))
        v3 = unflatten_params(g3, cfg3, pinned=False)
        v1 = unflatten_params(g1, cfg1, pinned=False)
        for name, col in (("mix_out_w", 0), ("mean_out_w", 0)):
            np.testing.assert_allclose(
                getattr(v3, name)[:, col], getattr(v1, name)[:, col], rtol=1e-11
            )
        np.testing.assert_allclose(v3.mean_out_b, v1.mean_out_b, rtol=1e-11)
        np.testing.assert_allclose(v3.var_out_b, v1.var_out_b, rtol=1e-11)
        np.testing.assert_allclose(
            v3.var_out_w[:, [0, 3]], v1.var_out_w[:, [0, 1]], rtol=1e-11
        )

    def test_non_finite_loss_yields_nan_gradients(self):
        cfg = RmdnConfig(n_components=1, k_hidden=1)
        p = init_params(cfg, 0, "pretrain")
        p.var_out_w[0, :] = 1e200
        loss, grads = gradient(np.ones(10), p, cfg, RecurrentState([1.0], 1.0))
        assert not np.isfinite(loss)
        assert np.all(np.isnan(grads))


class TestFiniteDiffCheck:
    def test_linear_model_passes(self):
        cfg = RmdnConfig(n_components=1, k_hidden=1)
        series = simulate_garch(PROBE, 30, seed=10)
        report = finite_diff_check(series, init_params(cfg, 1, "plain"), cfg,
                                   initial_state(series, cfg), tol=1e-5)
        assert report.passed

    def test_full_model_passes(self):
        cfg = RmdnConfig(n_components=2, k_hidden=3)
        series = simulate_garch(PROBE, 30, seed=11)
        report = finite_diff_check(series, init_params(cfg, 2, "plain"), cfg,
                                   initial_state(series, cfg), tol=1e-5)
        assert report.passed

    def test_corrupted_gradient_fails(self):
        cfg = RmdnConfig(n_components=2, k_hidden=2)
        series = simulate_garch(PROBE, 30, seed=12)
        report = finite_diff_check(series, init_params(cfg, 3, "plain"), cfg,
                                   initial_state(series, cfg), tol=1e-5)
        # inject a +0.1 fault into one analytic entry and re-apply the metric
        bad = report.analytic.copy()
        bad[0] += 0.1
        scale = np.maximum(np.abs(bad), np.abs(report.numeric)) + 1e-3
        deviations = np.abs(bad - report.numeric) / scale
        assert np.max(deviations) > report.tol

    def test_tight_tolerance_can_fail(self):
        cfg = RmdnConfig(n_components=2, k_hidden=2)
        series = simulate_garch(PROBE, 30, seed=13)
        report = finite_diff_check(series, init_params(cfg, 4, "plain"), cfg,
                                   initial_state(series, cfg), tol=1e-12)
        # central differences carry O(1e-9) roundoff; 1e-12 is unattainable
        assert not report.passed
        assert report.max_deviation > 1e-12
