"""Minimal dense MLP engine over flat float64 parameter vectors.

All model math is float64 and purely functional: every operation returns new
arrays and never mutates its inputs, so parameter vectors can be exchanged
and aggregated across simulated nodes without aliasing surprises.

Parameter layout (fixed, relied on by aggregation): for each layer in order,
the weight matrix W (in_dim x out_dim, row-major) followed by the bias
vector b (out_dim). Hidden layers apply ReLU; the final layer emits raw
logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, InputError, NumericError, ShapeError

LayerShapes = Sequence[tuple[int, int]]


def param_count(layer_shapes: LayerShapes) -> int:
    """Total number of parameters for the given layer shapes."""
    return int(sum(i * o + o for i, o in layer_shapes))


@dataclass
class ModelParams:
    """Flat parameter vector plus the layer shapes needed to interpret it."""

    layer_shapes: list[tuple[int, int]]
    values: np.ndarray

    def __post_init__(self) -> None:
        self.layer_shapes = [(int(i), int(o)) for i, o in self.layer_shapes]
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = param_count(self.layer_shapes)
        if self.values.shape != (expected,):
            raise ShapeError(
                f"parameter vector has length {self.values.size}, "
                f"layer shapes {self.layer_shapes} require {expected}"
            )

    @property
    def n_inputs(self) -> int:
        return self.layer_shapes[0][0]

    @property
    def n_outputs(self) -> int:
        return self.layer_shapes[-1][1]

    def copy(self) -> "ModelParams":
        return ModelParams(list(self.layer_shapes), self.values.copy())


@dataclass
class Batch:
    """A block of samples: features (n x d) and integer labels (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError("features must be a 2-d matrix")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ShapeError("labels length must equal the feature row count")
        if self.features.shape[0] < 1:
            raise ShapeError("a batch needs at least one sample")

    def __len__(self) -> int:
        return int(self.features.shape[0])


def _layer_views(params: ModelParams) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (W, b) views into the flat vector, in layer order."""
    off = 0
    for in_dim, out_dim in params.layer_shapes:
        w = params.values[off : off + in_dim * out_dim].reshape(in_dim, out_dim)
        off += in_dim * out_dim
        b = params.values[off : off + out_dim]
        off += out_dim
        yield w, b


def mlp_init(layer_shapes: LayerShapes, seed: int) -> ModelParams:
    """Glorot-uniform weights (bound sqrt(6/(in+out))) and zero biases.

    Deterministic for a fixed seed and shape list.
    """
    shapes = [(int(i), int(o)) for i, o in layer_shapes]
    if not shapes:
        raise ConfigurationError("layer shape list must not be empty")
    for in_dim, out_dim in shapes:
        if in_dim < 1 or out_dim < 1:
            raise ConfigurationError(f"layer dims must be >= 1, got ({in_dim}, {out_dim})")
    rng = np.random.default_rng(seed)
    chunks = []
    for in_dim, out_dim in shapes:
        bound = math.sqrt(6.0 / (in_dim + out_dim))
        chunks.append(rng.uniform(-bound, bound, size=in_dim * out_dim))
        chunks.append(np.zeros(out_dim))
    return ModelParams(shapes, np.concatenate(chunks))


def _forward_cached(
    params: ModelParams, features: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass that also returns each layer's input (for backprop)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("features must be a 2-d matrix")
    layers = list(_layer_views(params))
    inputs = [x]
    h = x
    for k, (w, b) in enumerate(layers):
        if h.shape[1] != w.shape[0]:
            raise ShapeError(
                f"layer {k} expects {w.shape[0]} inputs, got {h.shape[1]}"
            )
        z = h @ w + b
        h = z if k == len(layers) - 1 else np.maximum(z, 0.0)
        inputs.append(h)
    return h, inputs


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Logits (n x n_outputs) for a feature matrix. Pure function."""
    logits, _ = _forward_cached(params, features)
    return logits


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and row-softmax probabilities.

    Uses max-subtraction so arbitrarily large logits cannot overflow.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeError("logits must be (n, k) with one label per row")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    log_probs = shifted - np.log(denom)
    loss = float(-log_probs[np.arange(n), labels].mean())
    return loss, probs


def _backprop(
    params: ModelParams, inputs: list[np.ndarray], output_grad: np.ndarray
) -> np.ndarray:
    """Flat parameter gradient given dL/d(output) and cached layer inputs."""
    grad = np.zeros_like(params.values)
    offsets = []
    off = 0
    for in_dim, out_dim in params.layer_shapes:
        offsets.append(off)
        off += in_dim * out_dim + out_dim
    delta = np.asarray(output_grad, dtype=np.float64)
    layers = list(_layer_views(params))
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        in_dim, out_dim = params.layer_shapes[k]
        x_k = inputs[k]
        grad_w = x_k.T @ delta
        grad_b = delta.sum(axis=0)
        o = offsets[k]
        grad[o : o + in_dim * out_dim] = grad_w.reshape(-1)
        grad[o + in_dim * out_dim : o + in_dim * out_dim + out_dim] = grad_b
        if k > 0:
            # ReLU mask: inputs[k] is the post-activation output of layer k-1.
            delta = (delta @ w.T) * (inputs[k] > 0)
    return grad


def backward(params: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    """Loss and exact analytic gradient of softmax CE composed with forward.

    The loss is a mean over samples, so duplicating every sample leaves the
    gradient unchanged.
    """
    logits, inputs = _forward_cached(params, batch.features)
    loss, probs = softmax_cross_entropy(logits, batch.labels)
    n = len(batch)
    glogits = probs.copy()
    glogits[np.arange(n), batch.labels] -= 1.0
    glogits /= n
    return loss, _backprop(params, inputs, glogits)


def backward_from_outputs(
    params: ModelParams, features: np.ndarray, output_grad: np.ndarray
) -> np.ndarray:
    """Parameter gradient for any loss, given dL/d(output) row per sample.

    Lets callers train the same MLP under custom objectives (the policy and
    value heads use squared-error losses rather than cross entropy).
    """
    logits, inputs = _forward_cached(params, features)
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != logits.shape:
        raise ShapeError(
            f"output_grad shape {output_grad.shape} != outputs {logits.shape}"
        )
    return _backprop(params, inputs, output_grad)


def _check_step_args(params: ModelParams, grad: np.ndarray, lr: float) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise ShapeError("gradient length must match the parameter vector")
    if lr < 0:
        raise ConfigurationError("learning rate must be >= 0")
    if not np.all(np.isfinite(grad)):
        raise NumericError("gradient contains NaN or Inf")
    return grad


def sgd_step(params: ModelParams, grad: np.ndarray, lr: float) -> ModelParams:
    """One vanilla gradient-descent step; lr=0 returns an unchanged copy."""
    grad = _check_step_args(params, grad, lr)
    return ModelParams(list(params.layer_shapes), params.values - lr * grad)


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_init(n_params: int) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), t=0)


def adam_step(
    params: ModelParams,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """Bias-corrected Adam update; returns the new params and state."""
    grad = _check_step_args(params, grad, lr)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    values = params.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return ModelParams(list(params.layer_shapes), values), AdamState(m, v, t)
