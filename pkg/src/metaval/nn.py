"""Small fully-connected classifier with manual backprop.

Everything here is a pure function over immutable model/trace values: the
meta-training loop relies on taking a virtual one-step-ahead copy of the
model without disturbing the original, so ops never mutate their inputs.
All math is float64; at desk scale we care about gradient-check exactness,
not speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class MlpModel:
    """Rectifier MLP ending in a linear layer; probabilities via softmax.

    weights[l] has shape (fan_in, fan_out); activations flow as row
    vectors, so a layer computes z @ W + b.
    """

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "relu"

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer inputs captured during forward.

    inputs[l] is the activation fed INTO layer l (inputs[0] is x itself);
    the penultimate feature used by the meta-gradient math is inputs[-1].
    Arrays keep the rank of the original input (vector in, vector out).
    """

    inputs: tuple[np.ndarray, ...]
    logits: np.ndarray
    probs: np.ndarray

    @property
    def penultimate(self) -> np.ndarray:
        return self.inputs[-1]


@dataclass(frozen=True)
class GradientBundle:
    """Parameter gradients plus the raw last-layer logit gradient.

    logit_grad is probs - target per sample (no batch scaling); weight and
    bias grads are of the batch-mean loss.
    """

    d_weights: tuple[np.ndarray, ...]
    d_biases: tuple[np.ndarray, ...]
    logit_grad: np.ndarray

    def max_abs(self) -> float:
        return max(
            max(float(np.max(np.abs(g))) for g in self.d_weights),
            max(float(np.max(np.abs(g))) for g in self.d_biases),
        )


@dataclass(frozen=True)
class LrSchedule:
    """Cosine decay with warm restarts.

    A cycle of length T covers T+1 iterations (both endpoints included);
    the next cycle starts on the following iteration and is cycle_mult
    times longer (rounded).
    """

    eta_max: float
    eta_min: float = 0.0
    cycle_len: int = 100
    cycle_mult: float = 1.0

    def __post_init__(self):
        if not (0 <= self.eta_min < self.eta_max):
            raise ValueError("need 0 <= eta_min < eta_max")
        if self.cycle_len < 1 or self.cycle_mult < 1.0:
            raise ValueError("need cycle_len >= 1 and cycle_mult >= 1")


def init_mlp(layer_dims, rng: np.random.Generator, activation: str = "relu") -> MlpModel:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from the given rng."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError("layer_dims needs >= 2 positive entries")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpModel(dims, tuple(weights), tuple(biases), activation)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise DimensionError(f"expected vector or batch, got ndim={x.ndim}")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def forward(model: MlpModel, x) -> ForwardTrace:
    """Run the net, capturing every layer input. Accepts one row or a batch."""
    xb, single = _as_batch(x)
    if xb.shape[1] != model.layer_dims[0]:
        raise DimensionError(
            f"input dim {xb.shape[1]} != model input dim {model.layer_dims[0]}"
        )
    inputs = [xb]
    h = xb
    for l in range(model.n_layers - 1):
        h = np.maximum(h @ model.weights[l] + model.biases[l], 0.0)
        inputs.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    probs = softmax(logits)
    if single:
        inputs = [a[0] for a in inputs]
        logits, probs = logits[0], probs[0]
    return ForwardTrace(tuple(inputs), logits, probs)


def cross_entropy(target: np.ndarray, pred: np.ndarray):
    """-sum(target * log pred), pred clamped at 1e-12. Row-wise on batches."""
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    logs = np.log(np.maximum(pred, LOG_CLAMP))
    out = -np.sum(target * logs, axis=-1)
    return float(out) if out.ndim == 0 else out


def kl_divergence(p: np.ndarray, q: np.ndarray):
    """sum p*log(p/q) with the 0*log0 = 0 convention, q clamped at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    ratio = np.log(np.maximum(p, LOG_CLAMP)) - np.log(np.maximum(q, LOG_CLAMP))
    out = np.sum(np.where(p > 0.0, p * ratio, 0.0), axis=-1)
    return float(out) if out.ndim == 0 else out


def backward_from_logit_grads(
    model: MlpModel, trace: ForwardTrace, logit_grads: np.ndarray
) -> GradientBundle:
    """Backprop arbitrary per-sample logit gradients to all parameters.

    logit_grads rows are dLoss/dlogits including any batch scaling, so the
    composite training loss can sum several terms before one backward pass.
    """
    g, single = _as_batch(logit_grads)
    inputs = [a if a.ndim == 2 else a[None, :] for a in trace.inputs]
    d_w: list = [None] * model.n_layers
    d_b: list = [None] * model.n_layers
    delta = g
    for l in range(model.n_layers - 1, -1, -1):
        d_w[l] = inputs[l].T @ delta
        d_b[l] = np.sum(delta, axis=0)
        if l > 0:
            # rectifier gate: its input layer's output is nonzero exactly
            # where the unit was active
            delta = (delta @ model.weights[l].T) * (inputs[l] > 0.0)
    raw = logit_grads if not single else g[0]
    return GradientBundle(tuple(d_w), tuple(d_b), np.asarray(raw))


def backward(model: MlpModel, trace: ForwardTrace, target: np.ndarray) -> GradientBundle:
    """Gradients of mean cross-entropy over the trace's batch.

    The stored logit_grad stays per-sample (probs - target); parameter
    grads carry the 1/n batch scaling.
    """
    probs, single = _as_batch(trace.probs)
    tgt, _ = _as_batch(np.asarray(target, dtype=np.float64))
    if probs.shape != tgt.shape:
        raise DimensionError(f"target shape {tgt.shape} != probs shape {probs.shape}")
    resid = probs - tgt
    bundle = backward_from_logit_grads(model, trace, resid / resid.shape[0])
    return GradientBundle(
        bundle.d_weights, bundle.d_biases, resid[0] if single else resid
    )


def sgd_step(model: MlpModel, grads: GradientBundle, eta: float) -> MlpModel:
    """params - eta * grads as a fresh model; the input model is untouched."""
    new_w = tuple(w - eta * g for w, g in zip(model.weights, grads.d_weights))
    new_b = tuple(b - eta * g for b, g in zip(model.biases, grads.d_biases))
    return MlpModel(model.layer_dims, new_w, new_b, model.activation)


def extract_last_layer(trace: ForwardTrace, target: np.ndarray):
    """Penultimate feature and logit gradient (probs - target) per sample."""
    target = np.asarray(target, dtype=np.float64)
    return trace.penultimate, trace.probs - target


def _cycle_position(schedule: LrSchedule, t: int) -> tuple[int, int]:
    """Map iteration t to (offset within cycle, cycle length)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    start, k = 0, 0
    length = max(1, round(schedule.cycle_len * schedule.cycle_mult**0))
    while t > start + length:
        start += length + 1
        k += 1
        length = max(1, round(schedule.cycle_len * schedule.cycle_mult**k))
    return t - start, length


def lr_at(schedule: LrSchedule, t: int) -> float:
    offset, length = _cycle_position(schedule, t)
    span = schedule.eta_max - schedule.eta_min
    return schedule.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * offset / length))


def at_cycle_end(schedule: LrSchedule, t: int) -> bool:
    """True on the last iteration of a cycle, where lr_at == eta_min exactly."""
    offset, length = _cycle_position(schedule, t)
    return offset == length
