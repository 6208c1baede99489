"""The bi-level meta-training step.

Each step probes a one-step-ahead copy of the model, derives per-sample
training weights and pseudo-label gates from how each sample's last-layer
gradient aligns with the validation set's, then takes the real SGD step
on a composite loss (weighted CE + resolved-label CE + mixup CE + an
augmentation-consistency KL).

The analytic weight/gate formulas are exact derivatives of validation
loss through a virtual step that perturbs ONLY the last-layer weight
matrix; the probe and the finite-difference oracles in the tests use that
same restriction (scope="last_weight"), while the real step updates every
parameter. Keeping the two scopes straight is what makes the
gradient-fidelity checks meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError


@dataclass(frozen=True)
class MetaBatch:
    """A training mini-batch plus the current validation set."""

    train_idx: np.ndarray
    x: np.ndarray      # (B, d)
    y: np.ndarray      # (B, C) observed one-hots
    val_idx: np.ndarray
    val_x: np.ndarray  # (V, d)
    val_y: np.ndarray  # (V, C)

    def __post_init__(self):
        if np.intersect1d(self.train_idx, self.val_idx).size:
            raise ValueError("training batch and validation set overlap")

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def val_size(self) -> int:
        return self.val_x.shape[0]


@dataclass(frozen=True)
class MetaStepReport:
    sample_weights: np.ndarray  # (B,) normalized, sum 1 or all zero
    label_gates: np.ndarray     # (B,) in {0, 1}
    train_loss: float
    val_loss: float
    virtual_val_loss: float


@dataclass(frozen=True)
class MetaStepConfig:
    fixed_gate: float = 0.9         # blend weight of the observed label in probe targets
    weight_step: float = 1.0        # scale of the raw weight scores (cancels under normalize)
    mix_weight: float = 5.0
    consistency_weight: float = 20.0
    mixup_alpha: float = 1.0
    augment_strength: float = 0.1
    gate_sign_flip: bool = False


def pseudo_label(y: np.ndarray, p: np.ndarray, gate) -> np.ndarray:
    """gate * y + (1 - gate) * p; stays on the simplex. Row-wise on batches."""
    gate = np.asarray(gate, dtype=np.float64)
    if np.any(gate < 0.0) or np.any(gate > 1.0):
        raise ValueError("gate must be in [0, 1]")
    if gate.ndim == 1:
        gate = gate[:, None]
    return gate * np.asarray(y, dtype=np.float64) + (1.0 - gate) * np.asarray(p, dtype=np.float64)


def resolve_label(y: np.ndarray, p: np.ndarray, gate_star) -> np.ndarray:
    """The observed label where the gate is open, the prediction where shut."""
    gate = np.asarray(gate_star, dtype=np.float64)
    if gate.ndim == 0:
        return np.asarray(y) if gate > 0 else np.asarray(p)
    return np.where(gate[:, None] > 0, np.asarray(y), np.asarray(p))


def validation_features(model: "nn.MlpModel", val_x, val_y):
    """(penultimate features, logit gradients) of the validation set."""
    trace = nn.forward(model, val_x)
    return trace.penultimate, trace.probs - np.asarray(val_y, dtype=np.float64)


def virtual_step(
    model: "nn.MlpModel",
    batch: MetaBatch,
    weights: np.ndarray,
    gates,
    eta_theta: float,
    scope: str = "last_weight",
) -> "nn.MlpModel":
    """One-step-ahead copy after SGD on (1/B) sum weights_i CE(pseudo_i, f).

    scope="last_weight" moves only the final weight matrix (the meta
    probe); scope="all" is a full-parameter step. The input model is
    never modified.
    """
    weights = np.asarray(weights, dtype=np.float64)
    trace = nn.forward(model, batch.x)
    targets = pseudo_label(batch.y, trace.probs, gates)
    logit_grads = (weights[:, None] / batch.size) * (trace.probs - targets)
    if scope == "last_weight":
        d_w = trace.penultimate.T @ logit_grads
        new_w = model.weights[:-1] + (model.weights[-1] - eta_theta * d_w,)
        return nn.MlpModel(model.layer_dims, new_w, model.biases, model.activation)
    if scope == "all":
        bundle = nn.backward_from_logit_grads(model, trace, logit_grads)
        return nn.sgd_step(model, bundle, eta_theta)
    raise ValueError(f"unknown scope {scope!r}")


def weight_scores(
    batch: MetaBatch, model: "nn.MlpModel", feats_val, weight_step: float = 1.0,
    fixed_gate: float = 0.9,
) -> np.ndarray:
    """Unclipped per-sample weight scores (the pre-max(0,.) values).

    score_i = (weight_step / V) * sum_j (z_j . z_i)(g_j . g_i), with the
    training-side gradient taken against the probe target
    pseudo_label(y_i, p_i, fixed_gate). Equal to the negated derivative
    of validation loss w.r.t. sample i's weight at zero, scaled by
    B / eta_theta (the one-step chain-rule constant).
    """
    z_val, g_val = feats_val
    if len(z_val) == 0:
        raise ConfigError("validation set is empty")
    trace = nn.forward(model, batch.x)
    g_train = fixed_gate * (trace.probs - batch.y)
    pair = (z_val @ trace.penultimate.T) * (g_val @ g_train.T)
    return (weight_step / len(z_val)) * pair.sum(axis=0)


def update_sample_weights(
    batch: MetaBatch, model: "nn.MlpModel", feats_val, weight_step: float = 1.0,
    fixed_gate: float = 0.9,
) -> np.ndarray:
    """Clipped sample weights max(0, score); feats_val at the current model."""
    return np.maximum(weight_scores(batch, model, feats_val, weight_step, fixed_gate), 0.0)


def normalize_sample_weights(weights: np.ndarray) -> np.ndarray:
    """Scale nonnegative weights to sum 1; all-zero stays all-zero."""
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    total = weights.sum()
    return weights / total if total > 0 else np.zeros_like(weights)


def gate_scores(
    batch: MetaBatch, model: "nn.MlpModel", feats_val_probed, eta_theta: float
) -> np.ndarray:
    """Derivative of validation loss w.r.t. each sample's gate.

    d_i = -(eta_theta / B) * (1/V) * sum_j (z_j . z_i)(g_j . (p_i - y_i)),
    with validation features taken at the probed (one-step-ahead) model
    and training features at the current one.
    """
    z_val, g_val = feats_val_probed
    if len(z_val) == 0:
        raise ConfigError("validation set is empty")
    trace = nn.forward(model, batch.x)
    resid = trace.probs - batch.y
    pair = (z_val @ trace.penultimate.T) * (g_val @ resid.T)
    return -(eta_theta / batch.size) * pair.mean(axis=0)


def update_label_gates(
    batch: MetaBatch,
    model: "nn.MlpModel",
    feats_val_probed,
    eta_theta: float,
    sign_flip: bool = False,
) -> np.ndarray:
    """Binary gates: positive part of the sign of the gate scores.

    As contracted, a gate opens when increasing it would increase
    validation loss; sign_flip provides the descent-intuition variant for
    sensitivity runs without changing the default.
    """
    d = gate_scores(batch, model, feats_val_probed, eta_theta)
    return np.where(d < 0.0, 1.0, 0.0) if sign_flip else np.where(d > 0.0, 1.0, 0.0)


def training_loss_terms(
    batch: MetaBatch,
    weights: np.ndarray,
    gates: np.ndarray,
    model: "nn.MlpModel",
    cfg: MetaStepConfig,
    rng: np.random.Generator,
):
    """Composite loss value and its per-trace logit gradients.

    Per sample: weight_i * CE(pseudo(fixed_gate)) + (1/B) * CE(resolved)
    + mix_weight * CE on the train-validation mixup + consistency_weight
    * KL(clean prediction, augmented prediction); batch-averaged.
    Pseudo/resolved targets treat the model's prediction as constant
    (stop-gradient), and the KL term differentiates through both of its
    arguments. Returns (loss, [(trace, logit_grads), ...]).
    """
    B = batch.size
    weights = np.asarray(weights, dtype=np.float64)
    trace = nn.forward(model, batch.x)
    p = trace.probs
    target_fixed = pseudo_label(batch.y, p, cfg.fixed_gate)
    target_resolved = resolve_label(batch.y, p, gates)

    partners = rng.integers(0, batch.val_size, size=B)
    betas = rng.beta(cfg.mixup_alpha, cfg.mixup_alpha, size=B)
    x_mix = betas[:, None] * batch.x + (1.0 - betas[:, None]) * batch.val_x[partners]
    y_mix = betas[:, None] * target_resolved + (1.0 - betas[:, None]) * batch.val_y[partners]
    trace_mix = nn.forward(model, x_mix)

    x_aug = batch.x + cfg.augment_strength * rng.standard_normal(batch.x.shape)
    trace_aug = nn.forward(model, x_aug)
    q = trace_aug.probs

    ce_fixed = nn.cross_entropy(target_fixed, p)
    ce_resolved = nn.cross_entropy(target_resolved, p)
    ce_mix = nn.cross_entropy(y_mix, trace_mix.probs)
    kl = nn.kl_divergence(p, q)
    loss = float(
        np.mean(
            weights * ce_fixed
            + ce_resolved / B
            + cfg.mix_weight * ce_mix
            + cfg.consistency_weight * kl
        )
    )

    # gradient of KL(p, q) through p's logits: p*u - (p.u)p with u = log(p/q)
    u = np.log(np.maximum(p, nn.LOG_CLAMP)) - np.log(np.maximum(q, nn.LOG_CLAMP))
    g_kl_p = p * u - np.sum(p * u, axis=1, keepdims=True) * p
    g_x = (
        weights[:, None] * (p - target_fixed)
        + (p - target_resolved) / B
        + cfg.consistency_weight * g_kl_p
    ) / B
    g_mix = cfg.mix_weight * (trace_mix.probs - y_mix) / B
    g_aug = cfg.consistency_weight * (q - p) / B
    return loss, [(trace, g_x), (trace_mix, g_mix), (trace_aug, g_aug)]


def training_loss(
    batch: MetaBatch,
    weights: np.ndarray,
    gates: np.ndarray,
    model: "nn.MlpModel",
    cfg: MetaStepConfig,
    rng: np.random.Generator,
) -> float:
    loss, _ = training_loss_terms(batch, weights, gates, model, cfg, rng)
    return loss


def _summed_gradients(model: "nn.MlpModel", parts) -> "nn.GradientBundle":
    bundles = [nn.backward_from_logit_grads(model, trace, g) for trace, g in parts]
    d_w = tuple(sum(b.d_weights[l] for b in bundles) for l in range(model.n_layers))
    d_b = tuple(sum(b.d_biases[l] for b in bundles) for l in range(model.n_layers))
    return nn.GradientBundle(d_w, d_b, bundles[0].logit_grad)


def meta_train_step(
    model: "nn.MlpModel",
    batch: MetaBatch,
    schedule: "nn.LrSchedule",
    t: int,
    cfg: MetaStepConfig,
    rng: np.random.Generator,
):
    """Probe, reweight, gate, then take the real step at lr_at(schedule, t).

    Returns (updated model, MetaStepReport). The probe and the weight/gate
    math never touch the rng, so the report is a pure function of (model,
    batch, t); only the composite loss consumes random draws.
    """
    if batch.size == 0 or batch.val_size == 0:
        raise ConfigError("meta step needs a nonempty batch and validation set")
    eta = nn.lr_at(schedule, t)

    feats_val = validation_features(model, batch.val_x, batch.val_y)
    probed = virtual_step(model, batch, np.ones(batch.size), cfg.fixed_gate, eta)
    feats_val_probed = validation_features(probed, batch.val_x, batch.val_y)

    weights = normalize_sample_weights(
        update_sample_weights(batch, model, feats_val, cfg.weight_step, cfg.fixed_gate)
    )
    gates = update_label_gates(batch, model, feats_val_probed, eta, cfg.gate_sign_flip)

    loss, parts = training_loss_terms(batch, weights, gates, model, cfg, rng)
    new_model = nn.sgd_step(model, _summed_gradients(model, parts), eta)

    val_probs = nn.forward(model, batch.val_x).probs
    probed_probs = nn.forward(probed, batch.val_x).probs
    report = MetaStepReport(
        sample_weights=weights,
        label_gates=gates,
        train_loss=loss,
        val_loss=float(np.mean(nn.cross_entropy(batch.val_y, val_probs))),
        virtual_val_loss=float(np.mean(nn.cross_entropy(batch.val_y, probed_probs))),
    )
    return new_model, report
