"""Recurrent mixture density network with a strictly positive variance unit.

The model predicts, for each time step, the parameters of an N-component
Gaussian mixture for the next return. It is built from three single-hidden-
layer subnetworks whose hidden node 1 is linear and whose nodes 2..K are
tanh:

  mixing network   r_t -> logits -> softmax -> eta_{t+1}        (N weights)
  mean network     r_t -> mu_{t+1, i}                           (N means)
  variance network (e2_t, sigma2_{i,t}) -> sigma2_{i,t+1}       (N variances)

The variance network is recurrent: it reads the previous squared residual
e2_t = (r_t - mubar_t)^2, where mubar_t is the previous step's mixture mean,
and each component's own previous conditional variance. Its output unit is

    pelu(x) = elu(x, alpha) + 1 + eps

which is strictly positive for every finite input when 0 < alpha <= 1, so
predicted variances can never reach zero or go negative.

With a single component and all tanh weights at zero the model collapses to
an AR(1) conditional mean and, whenever the variance pre-activation is
positive, a GARCH(1,1) conditional variance; ``params_from_garch`` builds
that embedding explicitly.

For identifiability, the linear hidden node of each subnetwork is pinned to
the identity (input weight 1, bias 0). Pinned entries are excluded from the
trainable parameter set.

Presample conventions (shared with the GARCH baseline so the nested models
agree step by step): the input return before the sample starts is 0, the
presample squared residual is the population variance of the series, and the
presample conditional variance defaults to the same population variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mixture import MixtureStep, _as_values

SCHEMES = ("pretrain", "plain")


@dataclass(frozen=True)
class RmdnConfig:
    """Architecture hyperparameters.

    n_components: mixture size N; k_hidden: hidden nodes per subnetwork
    (node 1 linear, nodes 2..K tanh); elu_alpha: saturation scale of the
    variance output unit; elu_eps: positive offset keeping variances > 0.
    """

    n_components: int = 2
    k_hidden: int = 3
    elu_alpha: float = 1.0
    elu_eps: float = 1e-6

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.k_hidden < 1:
            raise ValueError("k_hidden must be >= 1")
        # alpha > 1 would let the output unit go non-positive at saturation
        if not 0.0 < self.elu_alpha <= 1.0:
            raise ValueError("elu_alpha must be in (0, 1]")
        if not 0.0 < self.elu_eps < 1e-3:
            raise ValueError("elu_eps must be in (0, 1e-3)")


@dataclass
class RmdnParams:
    """All weight groups of the three subnetworks.

    ``*_in_w`` / ``*_in_b`` are input-to-hidden weights and biases, one per
    hidden node; ``*_out_w`` / ``*_out_b`` are hidden-to-output weights (one
    row per mixture component) and output biases. The variance network has
    2K hidden nodes: nodes 0..K-1 read the squared residual, nodes K..2K-1
    read the component's own previous variance; rows 0 and K are the pinned
    linear nodes.
    """

    mix_in_w: np.ndarray   # (K,)
    mix_in_b: np.ndarray   # (K,)
    mix_out_w: np.ndarray  # (N, K)
    mix_out_b: np.ndarray  # (N,)
    mean_in_w: np.ndarray  # (K,)
    mean_in_b: np.ndarray  # (K,)
    mean_out_w: np.ndarray  # (N, K)
    mean_out_b: np.ndarray  # (N,)
    var_in_w: np.ndarray   # (2K,)
    var_in_b: np.ndarray   # (2K,)
    var_out_w: np.ndarray  # (N, 2K)
    var_out_b: np.ndarray  # (N,)

    @property
    def n_components(self) -> int:
        return self.mix_out_w.shape[0]

    @property
    def k_hidden(self) -> int:
        return self.mix_in_w.shape[0]

    def copy(self) -> "RmdnParams":
        return RmdnParams(*(np.array(getattr(self, f)) for f in _PARAM_FIELDS))

    def pin(self) -> None:
        """Reset the identifiability-pinned entries to their fixed values."""
        k = self.k_hidden
        for arr in (self.mix_in_w, self.mean_in_w):
            arr[0] = 1.0
        for arr in (self.mix_in_b, self.mean_in_b):
            arr[0] = 0.0
        self.var_in_w[0] = 1.0
        self.var_in_w[k] = 1.0
        self.var_in_b[0] = 0.0
        self.var_in_b[k] = 0.0


_PARAM_FIELDS = (
    "mix_in_w", "mix_in_b", "mix_out_w", "mix_out_b",
    "mean_in_w", "mean_in_b", "mean_out_w", "mean_out_b",
    "var_in_w", "var_in_b", "var_out_w", "var_out_b",
)


@dataclass
class RecurrentState:
    """Previous conditional variances (per component) and squared residual."""

    sigma2_prev: np.ndarray
    e2_prev: float

    def __post_init__(self):
        self.sigma2_prev = np.atleast_1d(np.asarray(self.sigma2_prev, dtype=float))
        self.e2_prev = float(self.e2_prev)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.sigma2_prev)) or np.any(self.sigma2_prev <= 0):
            raise ValueError("sigma2_prev entries must be positive and finite")
        if not np.isfinite(self.e2_prev) or self.e2_prev < 0:
            raise ValueError("e2_prev must be non-negative and finite")


def positive_elu(x, alpha: float, eps: float):
    """elu(x, alpha) + 1 + eps: x + 1 + eps for x > 0, else alpha*(e^x - 1) + 1 + eps.

    Continuous at 0 and strictly positive for every finite x when alpha <= 1
    (the saturation value for x -> -inf is 1 - alpha + eps).
    """
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0.0, x, alpha * np.expm1(np.minimum(x, 0.0))) + (1.0 + eps)
    return float(out) if out.ndim == 0 else out


def _hidden_batch(x: np.ndarray, in_w: np.ndarray, in_b: np.ndarray) -> np.ndarray:
    """Hidden activations for a batch of scalar inputs: (T,) -> (T, K).

    Node 0 is linear, the rest are tanh.
    """
    h = x[:, None] * in_w + in_b
    h[:, 1:] = np.tanh(h[:, 1:])
    return h


def _softmax_rows(y: np.ndarray) -> np.ndarray:
    m = np.max(y, axis=-1, keepdims=True)
    e = np.exp(y - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def mixing_forward(r_t: float, params: RmdnParams, config: RmdnConfig) -> np.ndarray:
    """Mixture weights eta for the next step, softmax over N logits."""
    h = _hidden_batch(np.array([float(r_t)]), params.mix_in_w, params.mix_in_b)
    logits = h @ params.mix_out_w.T + params.mix_out_b
    return _softmax_rows(logits)[0]


def mean_forward(r_t: float, params: RmdnParams, config: RmdnConfig) -> np.ndarray:
    """Component means mu for the next step."""
    h = _hidden_batch(np.array([float(r_t)]), params.mean_in_w, params.mean_in_b)
    return (h @ params.mean_out_w.T + params.mean_out_b)[0]


def variance_forward(state: RecurrentState, params: RmdnParams, config: RmdnConfig) -> np.ndarray:
    """Component variances for the next step, strictly positive by construction."""
    k = config.k_hidden
    he = _hidden_batch(np.array([state.e2_prev]), params.var_in_w[:k], params.var_in_b[:k])[0]
    hs = _hidden_batch(state.sigma2_prev, params.var_in_w[k:], params.var_in_b[k:])
    z = (
        params.var_out_w[:, :k] @ he
        + np.sum(params.var_out_w[:, k:] * hs, axis=1)
        + params.var_out_b
    )
    return positive_elu(z, config.elu_alpha, config.elu_eps)


def initial_state(series, config: RmdnConfig) -> RecurrentState:
    """Presample state: population variance of the series for both the
    per-component variance and the squared residual. The variance falls back
    to 1.0 for a constant series (it must stay positive); the squared
    residual is the raw variance and may be 0."""
    values = _as_values(series)
    var = float(np.var(values))
    sigma2_0 = var if var > 0.0 else 1.0
    return RecurrentState(np.full(config.n_components, sigma2_0), var)


class ForwardCache(NamedTuple):
    """Everything the backward pass needs from one unrolled forward pass."""

    inputs: np.ndarray    # (T,)  lag-1 inputs, inputs[0] = 0
    hm: np.ndarray        # (T, K)  mixing hidden activations
    eta: np.ndarray       # (T, N)
    hmu: np.ndarray       # (T, K)  mean hidden activations
    mu: np.ndarray        # (T, N)
    hvar: np.ndarray      # (T, N+1, K)  variance hidden: row 0 reads e2_t,
                          # rows 1..N read the component's own variance
    dpelu: np.ndarray     # (T, N)  output-unit derivative at the pre-activation
    sigma2: np.ndarray    # (T, N)
    e2_prev: np.ndarray   # (T,)  squared residual fed at each step
    s2_prev: np.ndarray   # (T, N)  variances fed at each step
    mu_bar: np.ndarray    # (T,)  mixture means
    resid: np.ndarray     # (T,)  r_t - mu_bar_t
    final_state: RecurrentState


def forward_pass(values: np.ndarray, params: RmdnParams, config: RmdnConfig,
                 init: RecurrentState) -> ForwardCache:
    """Unroll the model over the whole series.

    The mixing and mean networks have no recurrence and are evaluated for
    all steps at once; only the variance recursion iterates. Non-finite
    values are allowed to propagate (divergence is observable data).
    """
    t_len = values.size
    n = config.n_components
    k = config.k_hidden
    alpha, eps = config.elu_alpha, config.elu_eps

    inputs = np.empty(t_len)
    inputs[0] = 0.0
    inputs[1:] = values[:-1]

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        hm = _hidden_batch(inputs, params.mix_in_w, params.mix_in_b)
        eta = _softmax_rows(hm @ params.mix_out_w.T + params.mix_out_b)
        hmu = _hidden_batch(inputs, params.mean_in_w, params.mean_in_b)
        mu = hmu @ params.mean_out_w.T + params.mean_out_b

        hvar = np.empty((t_len, n + 1, k))
        dpelu = np.empty((t_len, n))
        sigma2 = np.empty((t_len, n))
        e2_prev = np.empty(t_len)
        s2_prev = np.empty((t_len, n))
        mu_bar = np.empty(t_len)
        resid = np.empty(t_len)

        we = params.var_out_w[:, :k]
        ws = params.var_out_w[:, k:]
        wiw_e, wib_e = params.var_in_w[:k], params.var_in_b[:k]
        wiw_s, wib_s = params.var_in_w[k:], params.var_in_b[k:]
        var_out_b = params.var_out_b
        one_eps = 1.0 + eps

        e2 = float(init.e2_prev)
        s2 = np.array(init.sigma2_prev, dtype=float)
        for t in range(t_len):
            e2_prev[t] = e2
            s2_prev[t] = s2

            h = hvar[t]
            h[0] = e2 * wiw_e + wib_e
            h[1:] = s2[:, None] * wiw_s + wib_s
            np.tanh(h[:, 1:], out=h[:, 1:])
            z = we @ h[0] + np.sum(ws * h[1:], axis=1) + var_out_b

            pos = z > 0.0
            if pos.all():
                dpelu[t] = 1.0
                s2 = z + one_eps
            else:
                neg = alpha * np.expm1(np.minimum(z, 0.0))
                dpelu[t] = np.where(pos, 1.0, neg + alpha)
                s2 = np.where(pos, z, neg) + one_eps
            sigma2[t] = s2

            mb = float(eta[t] @ mu[t])
            mu_bar[t] = mb
            r = values[t] - mb
            resid[t] = r
            e2 = r * r

    final = RecurrentState(np.array(s2), e2)
    return ForwardCache(inputs, hm, eta, hmu, mu, hvar, dpelu, sigma2,
                        e2_prev, s2_prev, mu_bar, resid, final)


def unroll(series, params: RmdnParams, config: RmdnConfig,
           init: RecurrentState) -> tuple[list[MixtureStep], RecurrentState]:
    """Run the model over a series; step t is the conditional mixture for r_t.

    Returns one MixtureStep per observation plus the final recurrent state.
    Steps that picked up NaN/inf are flagged via ``MixtureStep.valid`` rather
    than raising, so the likelihood can propagate the divergence.
    """
    values = _as_values(series)
    cache = forward_pass(values, params, config, init)
    steps = [
        MixtureStep(cache.eta[t], cache.mu[t], cache.sigma2[t])
        for t in range(values.size)
    ]
    return steps, cache.final_state


def _zeros_params(config: RmdnConfig) -> RmdnParams:
    n, k = config.n_components, config.k_hidden
    p = RmdnParams(
        mix_in_w=np.zeros(k), mix_in_b=np.zeros(k),
        mix_out_w=np.zeros((n, k)), mix_out_b=np.zeros(n),
        mean_in_w=np.zeros(k), mean_in_b=np.zeros(k),
        mean_out_w=np.zeros((n, k)), mean_out_b=np.zeros(n),
        var_in_w=np.zeros(2 * k), var_in_b=np.zeros(2 * k),
        var_out_w=np.zeros((n, 2 * k)), var_out_b=np.zeros(n),
    )
    p.pin()
    return p


def init_params(config: RmdnConfig, seed: int, scheme: str = "pretrain") -> RmdnParams:
    """Seeded parameter initialization.

    Common rules: pinned entries fixed; every variance-network output weight
    and every bias starts at 1; free linear-node output weights (mixing and
    mean) are uniform on [-0.5, 0.5].

    ``pretrain``: all tanh-node parameters (their input weights and biases
    and the output weights they feed) start at exactly 0, so the fresh model
    computes the same function as one with no tanh nodes at all.

    ``plain``: tanh input weights and tanh-side output weights of the mixing
    and mean networks are uniform on [-0.5, 0.5]; tanh input biases follow
    the bias rule (1).

    The linear-node draws come first in a fixed order, so models that share
    a seed share their linear starting point regardless of K or scheme.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {SCHEMES}")
    n, k = config.n_components, config.k_hidden
    rng = np.random.default_rng(seed)
    p = _zeros_params(config)

    u_lin = rng.uniform(-0.5, 0.5, n)
    v_lin = rng.uniform(-0.5, 0.5, n)

    p.mix_out_b[:] = 1.0
    p.mean_out_b[:] = 1.0
    p.var_out_w[:, :] = 1.0
    p.var_out_b[:] = 1.0
    p.mix_out_w[:, 0] = u_lin
    p.mean_out_w[:, 0] = v_lin

    if scheme == "plain":
        p.mix_in_w[1:] = rng.uniform(-0.5, 0.5, k - 1)
        p.mix_in_b[1:] = 1.0
        p.mean_in_w[1:] = rng.uniform(-0.5, 0.5, k - 1)
        p.mean_in_b[1:] = 1.0
        free = np.ones(2 * k, dtype=bool)
        free[[0, k]] = False
        p.var_in_w[free] = rng.uniform(-0.5, 0.5, 2 * k - 2)
        p.var_in_b[free] = 1.0
        p.mix_out_w[:, 1:] = rng.uniform(-0.5, 0.5, (n, k - 1))
        p.mean_out_w[:, 1:] = rng.uniform(-0.5, 0.5, (n, k - 1))
    else:
        # tanh nodes contribute tanh(0) * 0: structurally linear start
        p.var_out_w[:, 1:k] = 0.0
        p.var_out_w[:, k + 1:] = 0.0
    return p


def params_from_garch(garch_params, config: RmdnConfig) -> RmdnParams:
    """Embed an AR(1)-GARCH(1,1) into a single-component, linear-only model.

    mean:     mu_{t+1} = a1 * r_t + a0
    variance: sigma2_{t+1} = pelu(alpha1*e2_t + beta1*sigma2_t + alpha0 - 1 - eps)

    The embedding reproduces the GARCH recursion exactly on every step whose
    variance pre-activation is positive, i.e. whenever the filtered variance
    exceeds 1 + eps (guaranteed when alpha0 > 1 + eps).
    """
    if config.n_components != 1:
        raise ValueError("the nested GARCH embedding requires n_components == 1")
    k = config.k_hidden
    p = _zeros_params(config)
    p.mean_out_w[0, 0] = garch_params.a1
    p.mean_out_b[0] = garch_params.a0
    p.var_out_w[0, 0] = garch_params.alpha1
    p.var_out_w[0, k] = garch_params.beta1
    p.var_out_b[0] = garch_params.alpha0 - 1.0 - config.elu_eps
    return p
