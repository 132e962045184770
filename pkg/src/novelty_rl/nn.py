"""Small numpy MLP with a diagonal Gaussian action head, plus Adam.

Everything is float64 and works on either a single input vector or a batch
of row vectors. Parameters are plain immutable containers; optimisation works
on flat parameter vectors (see :func:`flatten_policy`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when an input or gradient does not match the network layout."""


class NonFiniteGradientError(FloatingPointError):
    """Raised when an optimizer step is given a NaN/inf gradient."""


@dataclass(frozen=True)
class MlpParams:
    """Weights and biases of a tanh MLP with a linear output layer.

    ``weights[k]`` has shape ``(layer_dims[k + 1], layer_dims[k])``.
    """

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ShapeError(f"invalid layer_dims {self.layer_dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("need one weight matrix and bias per layer")
        ws, bs = [], []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (dims[k + 1], dims[k]) or b.shape != (dims[k + 1],):
                raise ShapeError(
                    f"layer {k}: got W{w.shape} b{b.shape}, "
                    f"expected W{(dims[k + 1], dims[k])} b{(dims[k + 1],)}"
                )
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass(frozen=True)
class GaussianPolicyParams:
    """MLP producing the action mean plus a state-independent log-std."""

    mlp: MlpParams
    log_std: np.ndarray
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        log_std = np.array(self.log_std, dtype=np.float64).reshape(-1)
        if log_std.shape != (self.mlp.output_dim,):
            raise ShapeError(
                f"log_std has {log_std.size} entries, action dim is {self.mlp.output_dim}"
            )
        if not np.all(np.isfinite(log_std)):
            raise ValueError("log_std entries must be finite")
        log_std.setflags(write=False)
        object.__setattr__(self, "log_std", log_std)

    @property
    def state_dim(self) -> int:
        return self.mlp.input_dim

    @property
    def action_dim(self) -> int:
        return self.mlp.output_dim

    def mean(self, states: np.ndarray) -> np.ndarray:
        return forward(self.mlp, states)


def init_mlp(layer_dims: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(dims, tuple(weights), tuple(biases))


def make_policy(
    state_dim: int,
    action_dim: int,
    rng: np.random.Generator,
    hidden2: int = 32,
    metadata: dict | None = None,
) -> GaussianPolicyParams:
    """Default actor: two tanh hidden layers, the first fixed at 32 units."""
    mlp = init_mlp((state_dim, 32, hidden2, action_dim), rng)
    return GaussianPolicyParams(mlp, np.zeros(action_dim), dict(metadata or {}))


def _as_batch(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(
            f"input shape {np.shape(x)} does not match input dim {params.input_dim}"
        )
    return x, single


def forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network on one input vector or a ``(batch, in)`` array."""
    h, single = _as_batch(params, x)
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.tanh(h)
    return h[0] if single else h


def _forward_cached(params: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def backward(params: MlpParams, x, upstream) -> MlpParams:
    """Gradient of ``sum(upstream * forward(params, x))`` w.r.t. every parameter.

    For a batch the per-row contributions are summed. The result is returned
    as an :class:`MlpParams` holding gradients in place of weights.
    """
    xb, single = _as_batch(params, x)
    g = np.asarray(upstream, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != (xb.shape[0], params.output_dim):
        raise ShapeError(f"upstream shape {np.shape(upstream)} does not match output")
    gw, gb = _backward_from_acts(params, _forward_cached(params, xb), g)
    return MlpParams(params.layer_dims, tuple(gw), tuple(gb))


# -- flat parameter vectors -------------------------------------------------


def flatten_mlp(params: MlpParams) -> np.ndarray:
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten_mlp(layer_dims: Sequence[int], vec: np.ndarray) -> MlpParams:
    dims = tuple(layer_dims)
    vec = np.asarray(vec, dtype=np.float64)
    ws, bs, i = [], [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        ws.append(vec[i : i + fan_in * fan_out].reshape(fan_out, fan_in))
        i += fan_in * fan_out
        bs.append(vec[i : i + fan_out])
        i += fan_out
    if i != vec.size:
        raise ShapeError(f"flat vector has {vec.size} entries, layout needs {i}")
    return MlpParams(dims, tuple(ws), tuple(bs))


def flatten_policy(policy: GaussianPolicyParams) -> np.ndarray:
    """Concatenate MLP parameters (layer by layer, W then b) and log_std."""
    return np.concatenate([flatten_mlp(policy.mlp), policy.log_std])


def unflatten_policy(template: GaussianPolicyParams, vec) -> GaussianPolicyParams:
    vec = np.asarray(vec, dtype=np.float64)
    a = template.action_dim
    mlp = unflatten_mlp(template.mlp.layer_dims, vec[:-a])
    return GaussianPolicyParams(mlp, vec[-a:], dict(template.metadata))


# -- Gaussian head ----------------------------------------------------------


def gaussian_log_prob(mean, log_std, action) -> np.ndarray | float:
    """Log-density of a diagonal Gaussian, summed over the last axis."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if mean.shape[-1] != log_std.shape[-1] or mean.shape != action.shape:
        raise ShapeError("mean, log_std and action must have matching lengths")
    z = (action - mean) * np.exp(-log_std)
    out = np.sum(-log_std - _HALF_LOG_2PI - 0.5 * z * z, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def sample_action(policy: GaussianPolicyParams, state, rng: np.random.Generator):
    """Draw ``mean + std * eps``; returns ``(action, log_prob, mean)``.

    Works on one state or a batch of states; one normal draw per action entry.
    """
    mean = policy.mean(state)
    log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    eps = rng.standard_normal(mean.shape)
    action = mean + np.exp(log_std) * eps
    return action, gaussian_log_prob(mean, log_std, action), mean


def log_prob_and_vjp(policy: GaussianPolicyParams, states, actions):
    """Per-sample log-probs plus a function mapping sample weights to gradients.

    ``vjp(w)`` returns the flat gradient of ``sum_i w_i * log pi(a_i|s_i)``
    (layout of :func:`flatten_policy`). The forward pass is shared between
    calls, so several weightings of one minibatch cost one forward.
    """
    mlp = policy.mlp
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    log_std = policy.log_std
    acts = _forward_cached(mlp, states)
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - acts[-1]
    sq = diff * diff * inv_var
    logp = np.sum(-log_std - _HALF_LOG_2PI - 0.5 * sq, axis=1)

    def vjp(weights) -> np.ndarray:
        w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
        gw, gb = _backward_from_acts(mlp, acts, w * diff * inv_var)
        parts = []
        for a, b in zip(gw, gb):
            parts.append(a.ravel())
            parts.append(b)
        parts.append(np.sum(w * (sq - 1.0), axis=0))
        return np.concatenate(parts)

    return logp, vjp


def log_prob_grads(policy: GaussianPolicyParams, states, actions, weights):
    """Gradient of ``sum_i weights_i * log pi(a_i|s_i)`` and the per-sample log-probs."""
    logp, vjp = log_prob_and_vjp(policy, states, actions)
    return vjp(weights), logp


def _backward_from_acts(params: MlpParams, acts, g):
    n = len(params.weights)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    delta = g
    for k in range(n - 1, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k]) * (1.0 - acts[k] ** 2)
    return gw, gb


def mlp_flat_grad(params: MlpParams, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """:func:`backward` but returned as a flat vector (value-net fitting)."""
    gw, gb = _backward_from_acts(params, _forward_cached(params, x), upstream)
    parts = []
    for w, b in zip(gw, gb):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


# -- Adam -------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    step_count: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kwargs) -> "AdamState":
        return cls(0, np.zeros(n), np.zeros(n), **kwargs)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float = 3e-4):
    """One bias-corrected Adam *descent* step on a flat parameter vector.

    Pass the negated gradient to ascend. Returns ``(new_params, new_state)``.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ShapeError("params, grads and optimizer moments must share a shape")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError("non-finite gradient; update rejected")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(t, m, v, state.beta1, state.beta2, state.eps)
    return new_params, new_state
