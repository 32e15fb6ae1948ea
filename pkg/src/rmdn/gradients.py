"""Exact reverse-mode gradients of the unrolled negative log-likelihood.

The loss couples time steps through two recurrent paths: each component's
predicted variance feeds the next step's variance network, and the squared
residual e2_t = (r_t - mubar_t)^2 (which depends on the step's weights and
means) does the same. The backward pass runs the adjoint recursion over
those two carriers; everything else (mixing and mean networks, the loss
itself) is vectorized over time.

Two stability details:
  * the loss gradient is taken with respect to the mixing logits directly,
    d loss / d logit_n = eta_n - p_n with p the posterior responsibility,
    so underflowed weights (eta_n == 0) never produce 0/0;
  * a non-finite loss short-circuits to all-NaN gradients, which callers
    must treat as divergence rather than update through.

Trainable parameters live in a flat vector whose layout is fixed by
``flatten_params`` (pinned entries excluded). Freezing the tanh nodes is a
mask over that vector: their input weights and biases plus the output
weights attached to them, across all three subnetworks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mixture import LOG_2PI, _as_values, nll_arrays
from .network import RecurrentState, RmdnConfig, RmdnParams, forward_pass

# Flat vector layout, in order (pinned linear-node rows excluded):
#   mix_in_w[1:], mix_in_b[1:], mix_out_w, mix_out_b,
#   mean_in_w[1:], mean_in_b[1:], mean_out_w, mean_out_b,
#   var_in_w[free], var_in_b[free], var_out_w, var_out_b
# where the free variance rows are 1..K-1 and K+1..2K-1.


def _free_var_rows(k: int) -> np.ndarray:
    mask = np.ones(2 * k, dtype=bool)
    mask[[0, k]] = False
    return mask


def n_trainable(config: RmdnConfig) -> int:
    n, k = config.n_components, config.k_hidden
    return 8 * (k - 1) + 2 * n * (k + 1) + n * (2 * k + 1)


def flatten_params(params: RmdnParams, config: RmdnConfig) -> np.ndarray:
    """Trainable subset of the parameters as a flat vector."""
    free = _free_var_rows(config.k_hidden)
    return np.concatenate([
        params.mix_in_w[1:], params.mix_in_b[1:],
        params.mix_out_w.ravel(), params.mix_out_b,
        params.mean_in_w[1:], params.mean_in_b[1:],
        params.mean_out_w.ravel(), params.mean_out_b,
        params.var_in_w[free], params.var_in_b[free],
        params.var_out_w.ravel(), params.var_out_b,
    ])


def unflatten_params(theta: np.ndarray, config: RmdnConfig, pinned: bool = True) -> RmdnParams:
    """Inverse of ``flatten_params``.

    With ``pinned=True`` the pinned entries take their identifiability
    values; with ``pinned=False`` they are zero (useful for viewing a
    gradient vector in parameter shape).
    """
    n, k = config.n_components, config.k_hidden
    theta = np.asarray(theta, dtype=float)
    if theta.size != n_trainable(config):
        raise ValueError(
            f"expected {n_trainable(config)} trainable parameters, got {theta.size}"
        )
    free = _free_var_rows(k)
    p = RmdnParams(
        mix_in_w=np.zeros(k), mix_in_b=np.zeros(k),
        mix_out_w=np.zeros((n, k)), mix_out_b=np.zeros(n),
        mean_in_w=np.zeros(k), mean_in_b=np.zeros(k),
        mean_out_w=np.zeros((n, k)), mean_out_b=np.zeros(n),
        var_in_w=np.zeros(2 * k), var_in_b=np.zeros(2 * k),
        var_out_w=np.zeros((n, 2 * k)), var_out_b=np.zeros(n),
    )
    pos = 0

    def take(count, shape=None):
        nonlocal pos
        chunk = theta[pos:pos + count]
        pos += count
        return chunk.reshape(shape) if shape else chunk

    p.mix_in_w[1:] = take(k - 1)
    p.mix_in_b[1:] = take(k - 1)
    p.mix_out_w[:] = take(n * k, (n, k))
    p.mix_out_b[:] = take(n)
    p.mean_in_w[1:] = take(k - 1)
    p.mean_in_b[1:] = take(k - 1)
    p.mean_out_w[:] = take(n * k, (n, k))
    p.mean_out_b[:] = take(n)
    p.var_in_w[free] = take(2 * k - 2)
    p.var_in_b[free] = take(2 * k - 2)
    p.var_out_w[:] = take(n * 2 * k, (n, 2 * k))
    p.var_out_b[:] = take(n)
    if pinned:
        p.pin()
    return p


def nonlinear_node_mask(config: RmdnConfig) -> np.ndarray:
    """Boolean mask over the flat vector covering every tanh-node parameter:
    their input weights/biases and the output weights they feed."""
    n, k = config.n_components, config.k_hidden
    tanh_out = np.zeros((n, k), dtype=bool)
    tanh_out[:, 1:] = True
    var_tanh_out = np.zeros((n, 2 * k), dtype=bool)
    var_tanh_out[:, 1:k] = True
    var_tanh_out[:, k + 1:] = True
    return np.concatenate([
        np.ones(k - 1, dtype=bool), np.ones(k - 1, dtype=bool),
        tanh_out.ravel(), np.zeros(n, dtype=bool),
        np.ones(k - 1, dtype=bool), np.ones(k - 1, dtype=bool),
        tanh_out.ravel(), np.zeros(n, dtype=bool),
        np.ones(2 * k - 2, dtype=bool), np.ones(2 * k - 2, dtype=bool),
        var_tanh_out.ravel(), np.zeros(n, dtype=bool),
    ])


def apply_mask(grads: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero the masked gradient entries exactly, leaving the rest unchanged."""
    grads = np.asarray(grads, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if grads.shape != mask.shape:
        raise ValueError(f"mask length {mask.size} does not match gradient length {grads.size}")
    out = grads.copy()
    out[mask] = 0.0
    return out


def gradient(series, params: RmdnParams, config: RmdnConfig,
             init: RecurrentState) -> tuple[float, np.ndarray]:
    """Loss and its exact derivative through the full unroll.

    Returns the negative log-likelihood and the gradient over the flat
    trainable vector. A non-finite loss yields all-NaN gradients; callers
    must not update through them.
    """
    values = _as_values(series)
    cache = forward_pass(values, params, config, init)
    t_len = values.size
    n, k = config.n_components, config.k_hidden

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = (
            np.log(cache.eta)
            - 0.5 * LOG_2PI
            - 0.5 * np.log(cache.sigma2)
            - 0.5 * (values[:, None] - cache.mu) ** 2 / cache.sigma2
        )
        m = np.max(q, axis=1)
        shift = np.where(np.isfinite(m), m, 0.0)
        lse = shift + np.log(np.sum(np.exp(q - shift[:, None]), axis=1))
        lse = np.where(np.isfinite(m), lse, m)
        loss = float(-np.sum(lse))

    if not np.isfinite(loss):
        return loss, np.full(n_trainable(config), np.nan)

    p_post = np.exp(q - lse[:, None])            # posterior responsibilities (T, N)
    d = values[:, None] - cache.mu
    inv_s2 = 1.0 / cache.sigma2
    dl_dmu = -p_post * d * inv_s2                # (T, N)
    dl_ds2 = 0.5 * p_post * inv_s2 * (1.0 - d * d * inv_s2)

    we = params.var_out_w[:, :k]
    ws = params.var_out_w[:, k:]
    wiw_e = params.var_in_w[:k]
    wiw_s = params.var_in_w[k:]

    # adjoint recursion over the two recurrent carriers; the parameter
    # accumulations are deferred to vectorized reductions afterwards
    gz_all = np.empty((t_len, n))
    ghvar = np.empty((t_len, n + 1, k))
    dtanh = 1.0 - cache.hvar[:, :, 1:] ** 2
    gmu_bar = np.empty(t_len)
    ds2_next = np.zeros(n)
    de2_next = 0.0
    for t in range(t_len - 1, -1, -1):
        gmu_bar[t] = -2.0 * cache.resid[t] * de2_next
        gz = (dl_ds2[t] + ds2_next) * cache.dpelu[t]
        gz_all[t] = gz
        g = ghvar[t]
        g[0] = gz @ we
        g[1:] = gz[:, None] * ws
        g[:, 1:] *= dtanh[t]
        de2_next = float(g[0] @ wiw_e)
        ds2_next = g[1:] @ wiw_s

    he_all = cache.hvar[:, 0, :]
    hs_all = cache.hvar[:, 1:, :]
    ghe_all = ghvar[:, 0, :]
    ghs_all = ghvar[:, 1:, :]
    g_var_out_b = gz_all.sum(axis=0)
    g_var_out_w = np.empty((n, 2 * k))
    g_var_out_w[:, :k] = gz_all.T @ he_all
    g_var_out_w[:, k:] = np.einsum("tn,tnk->nk", gz_all, hs_all)
    g_var_in_w = np.empty(2 * k)
    g_var_in_b = np.empty(2 * k)
    g_var_in_w[:k] = ghe_all.T @ cache.e2_prev
    g_var_in_b[:k] = ghe_all.sum(axis=0)
    g_var_in_w[k:] = np.einsum("tnk,tn->k", ghs_all, cache.s2_prev)
    g_var_in_b[k:] = ghs_all.sum(axis=(0, 1))

    # loss -> logits directly (eta - p), plus the residual path through mubar
    geta_path = gmu_bar[:, None] * cache.mu
    glogit = (cache.eta - p_post) + cache.eta * (
        geta_path - np.sum(cache.eta * geta_path, axis=1, keepdims=True)
    )
    g_mix_out_w = glogit.T @ cache.hm
    g_mix_out_b = glogit.sum(axis=0)
    ghm = glogit @ params.mix_out_w
    ghm[:, 1:] *= 1.0 - cache.hm[:, 1:] ** 2
    g_mix_in_w = ghm.T @ cache.inputs
    g_mix_in_b = ghm.sum(axis=0)

    gmu_tot = dl_dmu + gmu_bar[:, None] * cache.eta
    g_mean_out_w = gmu_tot.T @ cache.hmu
    g_mean_out_b = gmu_tot.sum(axis=0)
    ghmu = gmu_tot @ params.mean_out_w
    ghmu[:, 1:] *= 1.0 - cache.hmu[:, 1:] ** 2
    g_mean_in_w = ghmu.T @ cache.inputs
    g_mean_in_b = ghmu.sum(axis=0)

    grad_struct = RmdnParams(
        g_mix_in_w, g_mix_in_b, g_mix_out_w, g_mix_out_b,
        g_mean_in_w, g_mean_in_b, g_mean_out_w, g_mean_out_b,
        g_var_in_w, g_var_in_b, g_var_out_w, g_var_out_b,
    )
    return loss, flatten_params(grad_struct, config)


def _nll_flat(theta: np.ndarray, values: np.ndarray, config: RmdnConfig,
              init: RecurrentState) -> float:
    cache = forward_pass(values, unflatten_params(theta, config), config, init)
    return nll_arrays(values, cache.eta, cache.mu, cache.sigma2)


@dataclass
class FiniteDiffReport:
    """Per-parameter deviation between analytic and central-difference
    gradients: |a - f| / (max(|a|, |f|) + 1e-3). Passing at tol 1e-5 is
    equivalent to |a - f| <= 1e-5 * max(|a|, |f|) + 1e-8, i.e. a relative
    match with an absolute floor that absorbs difference-quotient roundoff
    on near-zero gradients."""

    deviations: np.ndarray
    tol: float
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviations))

    @property
    def worst_index(self) -> int:
        return int(np.argmax(self.deviations))

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation <= self.tol)


def finite_diff_check(series, params: RmdnParams, config: RmdnConfig,
                      init: RecurrentState, tol: float = 1e-5,
                      step: float = 1e-6) -> FiniteDiffReport:
    """Compare the analytic gradient against central finite differences on
    every trainable parameter. Intended for short series (the cost is two
    forward passes per parameter)."""
    values = _as_values(series)
    _, analytic = gradient(values, params, config, init)
    theta = flatten_params(params, config)
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + step
        up = _nll_flat(bumped, values, config, init)
        bumped[i] = theta[i] - step
        down = _nll_flat(bumped, values, config, init)
        numeric[i] = (up - down) / (2.0 * step)
    scale = np.maximum(np.abs(analytic), np.abs(numeric)) + 1e-3
    deviations = np.abs(analytic - numeric) / scale
    return FiniteDiffReport(deviations, tol, analytic, numeric)
