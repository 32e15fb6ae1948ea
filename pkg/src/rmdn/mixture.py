"""Gaussian mixture steps and the log-space likelihood objective.

A :class:`MixtureStep` holds the parameters of a one-dimensional Gaussian
mixture

    p(r) = sum_i eta_i * phi(r; mu_i, sigma2_i)

used as the conditional density of a return series at one forecast origin.
The per-observation log density is evaluated as

    log p(r) = logsumexp_i [ log eta_i - 0.5*log(2*pi)
                             - 0.5*log(sigma2_i) - 0.5*(r - mu_i)^2 / sigma2_i ]

so that far-tail observations underflow gracefully instead of rounding the
density to zero. NaN values are propagated, never trapped: a diverged model
produces a NaN likelihood, which downstream convergence classification
treats as data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def _as_values(series) -> np.ndarray:
    """Accept a ReturnSeries or any array-like of returns."""
    return np.asarray(getattr(series, "values", series), dtype=float)


def logsumexp(values) -> float:
    """log(sum_i exp(v_i)) computed with the max-shift trick.

    Never overflows for finite inputs of any magnitude; NaN inputs propagate
    to a NaN result. Raises ValueError on an empty input.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("logsumexp of an empty sequence")
    m = float(np.max(v))
    if math.isnan(m):
        return math.nan
    if math.isinf(m):
        # all -inf -> log 0 = -inf; any +inf dominates
        return m
    return m + math.log(float(np.sum(np.exp(v - m))))


@dataclass
class MixtureStep:
    """Mixture parameters (weights, means, variances) for one time step."""

    eta: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        if not (self.eta.shape == self.mu.shape == self.sigma2.shape):
            raise ValueError("eta, mu and sigma2 must have the same length")

    @property
    def n_components(self) -> int:
        return self.eta.size

    @property
    def valid(self) -> bool:
        """True when every field is finite. NaN/inf steps are kept, flagged invalid."""
        return bool(
            np.all(np.isfinite(self.eta))
            and np.all(np.isfinite(self.mu))
            and np.all(np.isfinite(self.sigma2))
        )

    def validate(self, atol: float = 1e-12) -> None:
        """Raise ValueError if the step violates the mixture invariants."""
        if not self.valid:
            raise ValueError("mixture step contains non-finite values")
        if np.any(self.eta <= 0.0):
            raise ValueError("mixture weights must be strictly positive")
        if abs(float(np.sum(self.eta)) - 1.0) > atol:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.sigma2 <= 0.0):
            raise ValueError("component variances must be strictly positive")


def _log_weighted_densities(r: float, step: MixtureStep) -> np.ndarray:
    """log(eta_i * phi(r; mu_i, sigma2_i)) per component."""
    return (
        np.log(step.eta)
        - 0.5 * LOG_2PI
        - 0.5 * np.log(step.sigma2)
        - 0.5 * (r - step.mu) ** 2 / step.sigma2
    )


def log_density(r: float, step: MixtureStep) -> float:
    """Log of the mixture density at r.

    Raises ValueError when a component variance is non-positive, which
    signals an upstream activation failure; NaN fields propagate to a NaN
    result instead.
    """
    if np.any(step.sigma2 <= 0.0):
        raise ValueError("non-positive component variance")
    return logsumexp(_log_weighted_densities(r, step))


def nll(series, steps) -> float:
    """Negative log-likelihood sum_t -log p(r_t | step_t).

    NaN summands propagate so that diverged forward passes are observable.
    """
    values = _as_values(series)
    if len(steps) != values.size:
        raise ValueError(
            f"length mismatch: {values.size} observations vs {len(steps)} steps"
        )
    return float(sum(-log_density(r, step) for r, step in zip(values, steps)))


def nll_arrays(values: np.ndarray, eta: np.ndarray, mu: np.ndarray, sigma2: np.ndarray) -> float:
    """Vectorized negative log-likelihood over (T,N) mixture parameter arrays."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = (
            np.log(eta)
            - 0.5 * LOG_2PI
            - 0.5 * np.log(sigma2)
            - 0.5 * (values[:, None] - mu) ** 2 / sigma2
        )
        m = np.max(q, axis=1)
        shift = np.where(np.isfinite(m), m, 0.0)
        lse = shift + np.log(np.sum(np.exp(q - shift[:, None]), axis=1))
        lse = np.where(np.isfinite(m), lse, m)
    return float(-np.sum(lse))


def mixture_moments(step: MixtureStep) -> tuple[float, float]:
    """Mean and variance of the mixture: sum_i eta_i mu_i and
    sum_i eta_i (sigma2_i + (mu_i - mean)^2)."""
    mean = float(np.dot(step.eta, step.mu))
    var = float(np.dot(step.eta, step.sigma2 + (step.mu - mean) ** 2))
    return mean, var


def sample(step: MixtureStep, rng: np.random.Generator, size: int | None = None):
    """Draw from the mixture: component index by eta, then a Gaussian draw.

    With ``size=None`` returns a single float; otherwise an array of draws.
    Deterministic given the generator state.
    """
    if size is None:
        idx = int(rng.choice(step.n_components, p=step.eta))
        return float(rng.normal(step.mu[idx], math.sqrt(step.sigma2[idx])))
    idx = rng.choice(step.n_components, size=size, p=step.eta)
    return rng.normal(step.mu[idx], np.sqrt(step.sigma2[idx]))
