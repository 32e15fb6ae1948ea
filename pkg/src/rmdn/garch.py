"""AR(1)-GARCH(1,1) with Gaussian innovations: filter, likelihood, MLE, simulation.

Model:
    r_{t+1}      = mu_{t+1} + sigma_{t+1} * z_{t+1},   z ~ N(0, 1)
    mu_{t+1}     = a0 + a1 * r_t
    sigma2_{t+1} = alpha0 + alpha1 * e2_t + beta1 * sigma2_t,  e_t = r_t - mu_t

Presample conventions (shared with the network module so the nested models
agree step by step): r_0 = 0, e2_0 = population variance of the series,
sigma2_0 = init_var (defaults to the same population variance). The first
filtered pair is therefore mu_1 = a0 and sigma2_1 = alpha0 + alpha1*e2_0 +
beta1*init_var.

Fitting maximizes the likelihood by Adam on an unconstrained scale:
alpha0 = exp(t0), and (alpha1, beta1) = (p*s, p*(1-s)) with p, s logistic,
which enforces positivity and alpha1 + beta1 < 1. The gradient of the
likelihood is computed with the exact adjoint of the variance recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit

from .mixture import LOG_2PI, _as_values
from .optim import AdamState, adam_step


class GarchFitError(RuntimeError):
    """Raised when maximum-likelihood estimation cannot produce a finite fit."""


@dataclass(frozen=True)
class GarchParams:
    """AR(1)-GARCH(1,1) coefficients with stationarity enforced."""

    a0: float
    a1: float
    alpha0: float
    alpha1: float
    beta1: float

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if self.alpha1 < 0 or self.beta1 < 0:
            raise ValueError("alpha1 and beta1 must be non-negative")
        if not self.alpha1 + self.beta1 < 1:
            raise ValueError("stationarity requires alpha1 + beta1 < 1")

    @property
    def unconditional_variance(self) -> float:
        return self.alpha0 / (1.0 - self.alpha1 - self.beta1)


def _presample_variance(values: np.ndarray) -> float:
    var = float(np.var(values))
    return var if var > 0.0 else 1.0


def garch_filter(series, params: GarchParams, init_var: float | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Conditional means and variances for each observation.

    ``init_var`` overrides the presample conditional variance; the presample
    squared residual is always the population variance of the series.
    """
    values = _as_values(series)
    if init_var is None:
        init_var = _presample_variance(values)
    if not init_var > 0:
        raise ValueError("init_var must be positive")
    r_prev = np.empty_like(values)
    r_prev[0] = 0.0
    r_prev[1:] = values[:-1]
    mu = params.a0 + params.a1 * r_prev
    e2 = (values - mu) ** 2
    e2_prev = np.empty_like(values)
    e2_prev[0] = float(np.var(values))  # presample squared residual, may be 0
    e2_prev[1:] = e2[:-1]
    x = params.alpha0 + params.alpha1 * e2_prev
    sigma2 = lfilter([1.0], [1.0, -params.beta1], x, zi=[params.beta1 * init_var])[0]
    return mu, sigma2


def garch_nll(series, params: GarchParams, init_var: float | None = None) -> float:
    """Negative log-likelihood sum_t 0.5*(log 2pi + log sigma2_t + e2_t/sigma2_t)."""
    values = _as_values(series)
    mu, sigma2 = garch_filter(values, params, init_var)
    e2 = (values - mu) ** 2
    return float(0.5 * np.sum(LOG_2PI + np.log(sigma2) + e2 / sigma2))


def _unconstrain(params: GarchParams) -> np.ndarray:
    p = params.alpha1 + params.beta1
    s = params.alpha1 / p if p > 0 else 0.5
    logit = lambda q: math.log(q / (1.0 - q))
    return np.array([params.a0, params.a1, math.log(params.alpha0), logit(p), logit(s)])


def _constrain(theta: np.ndarray) -> GarchParams:
    a0, a1, t0, tp, ts = theta
    p = float(expit(tp))
    s = float(expit(ts))
    return GarchParams(float(a0), float(a1), math.exp(t0), p * s, p * (1.0 - s))


def _nll_grad_unconstrained(theta: np.ndarray, values: np.ndarray,
                            init_var: float, e2_0: float) -> tuple[float, np.ndarray]:
    """Exact NLL and gradient on the unconstrained scale via the adjoint of
    the variance recursion."""
    a0, a1, t0, tp, ts = theta
    alpha0 = math.exp(t0)
    p = float(expit(tp))
    s = float(expit(ts))
    alpha1 = p * s
    beta1 = p * (1.0 - s)

    r_prev = np.empty_like(values)
    r_prev[0] = 0.0
    r_prev[1:] = values[:-1]
    mu = a0 + a1 * r_prev
    e = values - mu
    e2 = e * e
    e2_prev = np.empty_like(values)
    e2_prev[0] = e2_0
    e2_prev[1:] = e2[:-1]
    x = alpha0 + alpha1 * e2_prev
    sigma2 = lfilter([1.0], [1.0, -beta1], x, zi=[beta1 * init_var])[0]

    inv_s2 = 1.0 / sigma2
    loss = float(0.5 * np.sum(LOG_2PI + np.log(sigma2) + e2 * inv_s2))
    if not np.isfinite(loss):
        return loss, np.full(5, np.nan)

    d_s2 = 0.5 * (inv_s2 - e2 * inv_s2 * inv_s2)
    # total adjoint: g_t = d_t + beta1 * g_{t+1}, run as a forward filter on
    # the reversed direct terms
    g_s2 = lfilter([1.0], [1.0, -beta1], d_s2[::-1])[::-1]
    g_next = np.empty_like(g_s2)
    g_next[:-1] = g_s2[1:]
    g_next[-1] = 0.0

    ge2 = 0.5 * inv_s2 + alpha1 * g_next
    gmu = -2.0 * e * ge2
    ga0 = float(np.sum(gmu))
    ga1 = float(np.sum(gmu * r_prev))
    galpha0 = float(np.sum(g_s2))
    galpha1 = float(np.sum(g_s2 * e2_prev))
    s2_lag = np.empty_like(sigma2)
    s2_lag[0] = init_var
    s2_lag[1:] = sigma2[:-1]
    gbeta1 = float(np.sum(g_s2 * s2_lag))

    gt0 = galpha0 * alpha0
    gtp = (galpha1 * s + gbeta1 * (1.0 - s)) * p * (1.0 - p)
    gts = (galpha1 - gbeta1) * p * s * (1.0 - s)
    return loss, np.array([ga0, ga1, gt0, gtp, gts])


def fit_garch(series, n_steps: int = 2000, learning_rate: float = 0.05
              ) -> tuple[GarchParams, float]:
    """Constrained MLE by Adam on the unconstrained scale.

    Starts from variance targeting (a0 = sample mean, a1 = 0, alpha1 = 0.05,
    beta1 = 0.90, alpha0 = 0.05 * sample variance) and returns the best
    iterate seen. Deterministic given the series.
    """
    values = _as_values(series)
    if values.size < 50:
        raise ValueError("fit_garch needs at least 50 observations")
    var = float(np.var(values))
    if not var > 0:
        raise GarchFitError("constant series has no GARCH likelihood")
    init_var = var
    e2_0 = var
    start = GarchParams(float(np.mean(values)), 0.0, 0.05 * var, 0.05, 0.90)
    theta = _unconstrain(start)

    best_loss = math.inf
    best_theta = theta.copy()
    state = AdamState.fresh(5, learning_rate)
    for i in range(n_steps):
        loss, grads = _nll_grad_unconstrained(theta, values, init_var, e2_0)
        if np.isfinite(loss) and loss < best_loss:
            best_loss = loss
            best_theta = theta.copy()
        if not np.all(np.isfinite(grads)):
            if i == 0:
                raise GarchFitError(
                    "non-finite objective at the variance-targeted starting point"
                )
            break
        theta, state = adam_step(theta, grads, state)
    final_loss, _ = _nll_grad_unconstrained(theta, values, init_var, e2_0)
    if np.isfinite(final_loss) and final_loss < best_loss:
        best_loss = final_loss
        best_theta = theta.copy()
    if not np.isfinite(best_loss):
        raise GarchFitError("likelihood never became finite during fitting")
    return _constrain(best_theta), -best_loss


def simulate_garch(params: GarchParams, t_len: int, seed: int, name: str | None = None):
    """Simulate a return path, starting from the unconditional variance.

    Presample state: e2 and sigma2 both equal the unconditional variance,
    r_0 = 0. Deterministic given the seed.
    """
    from .data import ReturnSeries

    if t_len < 1:
        raise ValueError("t_len must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(t_len)
    uncond = params.unconditional_variance
    values = np.empty(t_len)
    sigma2_prev = uncond
    e2_prev = uncond
    r_prev = 0.0
    for t in range(t_len):
        mu_t = params.a0 + params.a1 * r_prev
        sigma2_t = params.alpha0 + params.alpha1 * e2_prev + params.beta1 * sigma2_prev
        shock = math.sqrt(sigma2_t) * z[t]
        values[t] = mu_t + shock
        e2_prev = shock * shock
        sigma2_prev = sigma2_t
        r_prev = values[t]
    return ReturnSeries(values, name=name or f"garch-sim-{seed}")
