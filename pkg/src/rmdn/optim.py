"""Adam optimizer, the two-phase training schedule, and divergence handling.

Training minimizes the full-series negative log-likelihood with one Adam
step per epoch (no minibatching, no weight decay). The optional pretraining
phase zeroes the tanh-node gradients each epoch, so only the linear skeleton
(the GARCH-equivalent submodel) moves; the main phase then trains every
node. Adam moments carry over between phases: it is one continuous
optimization with the mask lifted, not two.

A run that produces a non-finite loss stops immediately and is classified
by the same rule used for finished runs: a final log-likelihood that is NaN
or below -100000 means "NotConverged". Divergence is a recorded outcome,
not an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .gradients import apply_mask, flatten_params, gradient, unflatten_params
from .mixture import nll_arrays, _as_values
from .network import RecurrentState, RmdnConfig, RmdnParams, forward_pass, initial_state

CONVERGED = "Converged"
NOT_CONVERGED = "NotConverged"

LOGLIK_FLOOR = -100_000.0


@dataclass
class AdamState:
    """First/second moment vectors, step count and hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int, learning_rate: float, **kwargs) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, learning_rate, **kwargs)


def adam_step(theta: np.ndarray, grads: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Entries with zero gradient and zero
    moment history stay exactly where they are, which is what keeps masked
    parameters frozen during pretraining."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != theta.shape:
        raise ValueError("gradient length does not match parameter length")
    if not np.all(np.isfinite(grads)):
        raise ValueError("refusing to update through non-finite gradients")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_theta = theta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_theta, replace(state, m=m, v=v, t=t)


@dataclass(frozen=True)
class TrainSchedule:
    """Epoch counts for the masked and full phases plus the learning rate."""

    pretrain_epochs: int = 20
    train_epochs: int = 300
    learning_rate: float = 0.01

    def __post_init__(self):
        if self.pretrain_epochs < 0:
            raise ValueError("pretrain_epochs must be >= 0")
        if self.train_epochs < 1:
            raise ValueError("train_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @property
    def total_epochs(self) -> int:
        return self.pretrain_epochs + self.train_epochs


def classify_convergence(final_loglik: float) -> str:
    """NotConverged iff the final log-likelihood is NaN or below -100000."""
    if math.isnan(final_loglik) or final_loglik < LOGLIK_FLOOR:
        return NOT_CONVERGED
    return CONVERGED


@dataclass
class TrainReport:
    """Outcome of one training run."""

    loss_trace: list[float]
    final_params: RmdnParams
    final_loglik: float
    status: str
    divergence_epoch: int | None
    epochs_completed: int


def train(series, params: RmdnParams, config: RmdnConfig, schedule: TrainSchedule,
          mask: np.ndarray | None = None, init: RecurrentState | None = None,
          callback=None) -> TrainReport:
    """Run the two-phase schedule from the given starting parameters.

    ``mask`` marks the gradient entries to zero during the pretraining
    phase (typically ``nonlinear_node_mask``). The loss trace records the
    objective at the start of each epoch; the reported log-likelihood is
    evaluated at the final parameters. ``callback(epoch, theta, loss)``,
    if given, observes the flat parameter vector after each update.
    Deterministic given its inputs.
    """
    values = _as_values(series)
    if init is None:
        init = initial_state(values, config)
    theta = flatten_params(params, config)
    state = AdamState.fresh(theta.size, schedule.learning_rate)
    trace: list[float] = []
    divergence_epoch = None

    for epoch in range(schedule.total_epochs):
        loss, grads = gradient(values, unflatten_params(theta, config), config, init)
        trace.append(float(loss))
        if not np.isfinite(loss):
            divergence_epoch = epoch
            break
        if epoch < schedule.pretrain_epochs and mask is not None:
            grads = apply_mask(grads, mask)
        theta, state = adam_step(theta, grads, state)
        if callback is not None:
            callback(epoch, theta.copy(), float(loss))

    final_params = unflatten_params(theta, config)
    if divergence_epoch is None:
        cache = forward_pass(values, final_params, config, init)
        final_loglik = -nll_arrays(values, cache.eta, cache.mu, cache.sigma2)
        epochs_completed = schedule.total_epochs
    else:
        final_loglik = math.nan
        epochs_completed = divergence_epoch
    return TrainReport(
        loss_trace=trace,
        final_params=final_params,
        final_loglik=float(final_loglik),
        status=classify_convergence(final_loglik),
        divergence_epoch=divergence_epoch,
        epochs_completed=epochs_completed,
    )
