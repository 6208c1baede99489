"""Warm-up training, small-loss partitioning, and robust-label upkeep.

The detector fits a 2-component 1-D Gaussian mixture to per-sample CE
losses; the lower-mean component is taken as pseudo-clean. EM is written
out by hand because the contract pins the init, tolerance, iteration cap,
and degenerate fallback, which library mixtures do not let us control
deterministically.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import nn


@dataclass(frozen=True)
class SampleState:
    """Per-sample meta state carried across the training loop.

    pred_window is a ring of the model's recent predictions (one per
    epoch); robust_label is their slow-moving average blend. weight and
    gate are transient per-batch values kept for diagnostics.
    """

    robust_label: np.ndarray
    pred_window: deque
    weight: float = 0.0
    gate: float = 1.0
    loss: float = 0.0


def new_sample_state(robust_label: np.ndarray, window_len: int) -> SampleState:
    return SampleState(
        robust_label=np.asarray(robust_label, dtype=np.float64),
        pred_window=deque(maxlen=window_len),
    )


def push_prediction(state: SampleState, probs: np.ndarray) -> None:
    state.pred_window.append(np.asarray(probs, dtype=np.float64))


def update_moving_avg(state: SampleState, decay: float) -> SampleState:
    """Blend the window mean into the robust label.

    Returns a new state; if the window is not yet full the input state is
    returned unchanged (identity serves as the skip signal, callers gate
    on warm-up progress anyway).
    """
    if not 0.0 <= decay <= 1.0:
        raise ValueError("decay must be in [0, 1]")
    if len(state.pred_window) < (state.pred_window.maxlen or 0):
        return state
    window_mean = np.mean(np.stack(state.pred_window), axis=0)
    return replace(state, robust_label=decay * state.robust_label + (1.0 - decay) * window_mean)


@dataclass(frozen=True)
class PartitionResult:
    clean_idx: np.ndarray
    noisy_idx: np.ndarray
    clean_posteriors: np.ndarray
    component_means: tuple[float, float] = (0.0, 0.0)  # (clean, noisy) diagnostics
    used_fallback: bool = False


def warmup_train(
    model: "nn.MlpModel",
    ds,
    max_epochs: int,
    patience: int,
    eta: float,
    batch_size: int = 64,
    holdout_frac: float = 0.1,
    seed: int = 0,
    epoch_log: list | None = None,
) -> "nn.MlpModel":
    """Plain CE training with early stopping on an internal held-out split.

    The split only drives stopping; the returned checkpoint is the one
    with the best held-out loss. Determinism comes from the seed alone.
    """
    if max_epochs < 1:
        raise ValueError("max_epochs must be >= 1")
    rng = np.random.default_rng(seed)
    n = ds.n
    n_hold = max(1, round(holdout_frac * n)) if n >= 2 else 0
    hold = rng.choice(n, size=n_hold, replace=False)
    hold_mask = np.zeros(n, dtype=bool)
    hold_mask[hold] = True
    train_rows = np.flatnonzero(~hold_mask)

    best = model
    best_loss = math.inf
    stale = 0
    for epoch in range(max_epochs):
        order = rng.permutation(train_rows)
        for lo in range(0, len(order), batch_size):
            rows = order[lo : lo + batch_size]
            trace = nn.forward(model, ds.features[rows])
            grads = nn.backward(model, trace, ds.observed_labels[rows])
            model = nn.sgd_step(model, grads, eta)
        hold_probs = nn.forward(model, ds.features[hold]).probs
        hold_loss = float(np.mean(nn.cross_entropy(ds.observed_labels[hold], hold_probs)))
        if epoch_log is not None:
            epoch_log.append(hold_loss)
        if hold_loss < best_loss:
            best_loss, best, stale = hold_loss, model, 0
        else:
            stale += 1
            if stale > patience:
                break
    return best


def per_sample_losses(model: "nn.MlpModel", ds) -> np.ndarray:
    """CE between each observed label and the model's prediction."""
    probs = nn.forward(model, ds.features).probs
    return np.asarray(nn.cross_entropy(ds.observed_labels, probs))


def _fallback_partition(losses: np.ndarray) -> PartitionResult:
    n = len(losses)
    order = np.argsort(losses, kind="stable")
    n_clean = math.ceil(n / 2)
    clean = np.sort(order[:n_clean])
    noisy = np.sort(order[n_clean:])
    post = np.zeros(n)
    post[clean] = 1.0
    mean = float(np.mean(losses))
    return PartitionResult(clean, noisy, post, (mean, mean), used_fallback=True)


def partition_small_loss(losses: np.ndarray, max_iter: int = 100, tol: float = 1e-6) -> PartitionResult:
    """Two-component 1-D GMM over losses; lower-mean component is clean.

    Quantile-initialized EM, log-likelihood tolerance stop, variance floor;
    if the fitted means collapse within 1e-3 the smaller half of the
    losses (stable sort, ceil(n/2) of them) is declared clean instead.
    """
    losses = np.asarray(losses, dtype=np.float64)
    n = len(losses)
    if n < 2:
        raise ValueError("need at least 2 samples to partition")
    var_floor = 1e-10
    mu = np.array([np.quantile(losses, 0.1), np.quantile(losses, 0.9)])
    var = np.full(2, max(float(np.var(losses)), var_floor))
    w = np.array([0.5, 0.5])
    prev_ll = -math.inf
    resp = np.full((n, 2), 0.5)
    for _ in range(max_iter):
        log_pdf = (
            np.log(np.maximum(w, 1e-300))
            - 0.5 * np.log(2.0 * math.pi * var)
            - 0.5 * (losses[:, None] - mu) ** 2 / var
        )
        norm = np.logaddexp(log_pdf[:, 0], log_pdf[:, 1])
        ll = float(np.sum(norm))
        resp = np.exp(log_pdf - norm[:, None])
        mass = np.maximum(resp.sum(axis=0), 1e-300)
        w = mass / n
        mu = (resp * losses[:, None]).sum(axis=0) / mass
        var = np.maximum(
            (resp * (losses[:, None] - mu) ** 2).sum(axis=0) / mass, var_floor
        )
        if abs(ll - prev_ll) < tol:
            break
        prev_ll = ll
    if abs(mu[0] - mu[1]) < 1e-3:
        return _fallback_partition(losses)
    lower = int(np.argmin(mu))
    post = resp[:, lower]
    clean = np.flatnonzero(post > 0.5)
    noisy = np.flatnonzero(post <= 0.5)
    if clean.size == 0 or noisy.size == 0:
        # a fit this lopsided is as unusable as collapsed means
        return _fallback_partition(losses)
    return PartitionResult(clean, noisy, post, (float(mu[lower]), float(mu[1 - lower])))


def build_candidate_subset(
    clean_idx: np.ndarray,
    observed_labels: np.ndarray,
    robust_labels: np.ndarray,
    n_per_class: int,
    seed: int,
) -> tuple[np.ndarray, list[str]]:
    """Label-consistent members of the clean set, capped per class.

    Keeps clean samples whose observed label agrees with their robust
    label (argmax, first index on ties), then uniformly samples up to
    n_per_class per observed class. Classes with no consistent member
    yield a warning string; callers must tolerate the gap.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    clean_idx = np.asarray(clean_idx)
    rng = np.random.default_rng(seed)
    n_classes = observed_labels.shape[1]
    obs = np.argmax(observed_labels[clean_idx], axis=1)
    rob = np.argmax(robust_labels[clean_idx], axis=1)
    consistent = clean_idx[obs == rob]
    cons_classes = obs[obs == rob]
    picks, warnings = [], []
    for c in range(n_classes):
        members = consistent[cons_classes == c]
        if len(members) == 0:
            warnings.append(f"class {c}: no label-consistent pseudo-clean samples")
            continue
        take = min(n_per_class, len(members))
        picks.append(rng.choice(members, size=take, replace=False))
    chosen = np.sort(np.concatenate(picks)) if picks else np.array([], dtype=int)
    return chosen, warnings
