"""Validation-set selection: pairwise utilities, the two greedy stages,
and an exhaustive oracle for small instances.

The pairwise utility of two samples couples feature similarity with
last-layer gradient alignment; the lower stage greedily builds a per-class
shortlist that covers the pool's utility mass, the upper stage picks the
per-class validation samples whose features align most with the rest of
their class (a proxy for being correctly labeled).

Index sets passed around are original dataset indices; a FeatureBank maps
them to rows. The greedy inner loops dispatch to a compiled kernel when
the extension built, with a numpy fallback otherwise (METAVAL_PURE_PY=1
forces the fallback).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from . import nn
from .errors import ConfigError

if os.environ.get("METAVAL_PURE_PY"):
    from . import _kernels_py as _kern

    _COMPILED = False
else:
    try:
        from . import _kernels_cy as _kern  # type: ignore[attr-defined]

        _COMPILED = True
    except ImportError:
        from . import _kernels_py as _kern

        _COMPILED = False


def kernel_backend() -> str:
    return "compiled" if _COMPILED else "numpy"


@dataclass(frozen=True)
class UtilityFeatures:
    """One sample's penultimate feature, logit gradient, and class."""

    z: np.ndarray
    g: np.ndarray
    label: int


@dataclass(frozen=True)
class FeatureBank:
    """Stacked UtilityFeatures for a pool, keyed by original index.

    idx is strictly ascending; all selection ops take and return original
    indices and use the bank to reach rows.
    """

    z: np.ndarray        # (n, h)
    g: np.ndarray        # (n, C)
    classes: np.ndarray  # (n,)
    idx: np.ndarray      # (n,) ascending original indices

    def __len__(self) -> int:
        return len(self.idx)

    def positions(self, indices) -> np.ndarray:
        indices = np.asarray(indices)
        pos = np.searchsorted(self.idx, indices)
        if np.any(pos >= len(self.idx)) or np.any(self.idx[pos] != indices):
            raise KeyError("index not present in feature bank")
        return pos

    def get(self, index: int) -> UtilityFeatures:
        p = int(self.positions([index])[0])
        return UtilityFeatures(self.z[p], self.g[p], int(self.classes[p]))


def build_feature_bank(model, ds, indices, robust_labels=None) -> FeatureBank:
    """Features and logit gradients for the given rows at the given model.

    Gradients are taken against observed labels; passing robust_labels
    switches the target to the slow-moving label estimates instead.
    """
    indices = np.sort(np.asarray(indices, dtype=np.int64))
    trace = nn.forward(model, ds.features[indices])
    targets = ds.observed_labels[indices] if robust_labels is None else robust_labels[indices]
    g = trace.probs - targets
    classes = np.argmax(ds.observed_labels[indices], axis=1)
    return FeatureBank(trace.penultimate, g, classes, indices)


def pair_utility(a: UtilityFeatures, b: UtilityFeatures) -> float:
    """(z_b . z_a) * (g_b . g_a): similar features AND aligned gradients."""
    return float(np.dot(b.z, a.z) * np.dot(b.g, a.g))


def _pair_matrix(feats: FeatureBank, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return (feats.z[rows] @ feats.z[cols].T) * (feats.g[rows] @ feats.g[cols].T)


def _exact_symmetric(square: np.ndarray) -> np.ndarray:
    # greedy ties between mutually-covering pairs are exact only if the
    # matrix is exactly symmetric; matmul output is not guaranteed to be
    return (square + square.T) * 0.5


def _sim_matrix(feats: FeatureBank, rows: np.ndarray, cols: np.ndarray,
                normalized: bool = False) -> np.ndarray:
    z = feats.z
    if normalized:
        z = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    return z[rows] @ z[cols].T


def info_objective(candidate, pool, feats: FeatureBank) -> float:
    """Utility mass of the pool covered by the candidate set.

    Each non-candidate pool sample contributes its best pairwise utility
    against candidates of its own class, or 0 if its class has none.
    """
    cand = np.asarray(candidate, dtype=np.int64)
    pool = np.asarray(pool, dtype=np.int64)
    rest = np.setdiff1d(pool, cand)
    if rest.size == 0 or cand.size == 0:
        return 0.0
    cpos = feats.positions(cand)
    rpos = feats.positions(rest)
    pairs = _pair_matrix(feats, rpos, cpos)
    same = feats.classes[rpos][:, None] == feats.classes[cpos][None, :]
    masked = np.where(same, pairs, -np.inf)
    best = masked.max(axis=1)
    return float(np.sum(np.where(np.isfinite(best), best, 0.0)))


def clean_objective(subset, pool, feats: FeatureBank, normalized: bool = False) -> float:
    """Feature-similarity mass between the subset and its class peers.

    Sum over (j in subset, i in pool minus subset, same class) of
    z_j . z_i; `normalized` swaps dot products for cosines (off-contract
    variant, kept for sensitivity checks).
    """
    sub = np.asarray(subset, dtype=np.int64)
    pool = np.asarray(pool, dtype=np.int64)
    rest = np.setdiff1d(pool, sub)
    if rest.size == 0 or sub.size == 0:
        return 0.0
    spos = feats.positions(sub)
    rpos = feats.positions(rest)
    sims = _sim_matrix(feats, spos, rpos, normalized)
    same = feats.classes[spos][:, None] == feats.classes[rpos][None, :]
    return float(np.sum(np.where(same, sims, 0.0)))


def _class_blocks(feats: FeatureBank, pool: np.ndarray):
    """Yield (class, pool positions of that class, ascending)."""
    pos = feats.positions(np.sort(np.asarray(pool, dtype=np.int64)))
    classes = feats.classes[pos]
    for c in range(feats.g.shape[1]):
        yield c, pos[classes == c]


def greedy_lower(pool, feats: FeatureBank, per_class: int) -> np.ndarray:
    """Per-class greedy shortlist maximizing info_objective incrementally.

    Classes are visited in ascending order; within a class each step adds
    the candidate maximizing the grown set's objective, lowest original
    index on ties. Returns picks in selection order; min(per_class,
    availability) per class.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    picks: list[int] = []
    for _c, block in _class_blocks(feats, pool):
        if block.size == 0:
            continue
        blk = np.ascontiguousarray(_exact_symmetric(_pair_matrix(feats, block, block)))
        local = _kern.greedy_info_block(blk, np.arange(block.size, dtype=np.int64), per_class)
        picks.extend(feats.idx[block[local]].tolist())
    return np.asarray(picks, dtype=np.int64)


def greedy_upper(lower_set, pool, feats: FeatureBank, per_class: int,
                 normalized: bool = False) -> np.ndarray:
    """Per-class greedy pick from the shortlist, scored against the pool.

    Maximizes clean_objective of the grown set: candidates come from
    lower_set, similarity sums run over the whole pool's class block.
    Returns picks in selection order.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    lower_set = np.asarray(lower_set, dtype=np.int64)
    picks: list[int] = []
    for _c, block in _class_blocks(feats, pool):
        if block.size == 0:
            continue
        in_lower = np.isin(feats.idx[block], lower_set)
        cands = np.flatnonzero(in_lower).astype(np.int64)
        if cands.size == 0:
            continue
        sim = np.ascontiguousarray(_exact_symmetric(_sim_matrix(feats, block, block, normalized)))
        selected = np.zeros(block.size, dtype=np.uint8)
        local = _kern.greedy_gain_block(sim, cands, per_class, selected)
        picks.extend(feats.idx[block[local]].tolist())
    return np.asarray(picks, dtype=np.int64)


def greedy_weight_sum(pool, feats: FeatureBank, per_class: int) -> np.ndarray:
    """Single-stage greedy on the plain pairwise-utility sum.

    Objective of S: sum over (i in pool minus S, j in S) of the pairwise
    utility, i.e. the coverage objective with max replaced by sum and no
    class restriction on pairs; candidates are still taken per class.
    Selected-set state carries across classes because cross-class pairs
    count here. Returns picks in selection order.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    pool = np.sort(np.asarray(pool, dtype=np.int64))
    pos = feats.positions(pool)
    pair = np.ascontiguousarray(_exact_symmetric(_pair_matrix(feats, pos, pos)))
    selected = np.zeros(len(pos), dtype=np.uint8)
    classes = feats.classes[pos]
    picks: list[int] = []
    for c in range(feats.g.shape[1]):
        cands = np.flatnonzero(classes == c).astype(np.int64)
        if cands.size == 0:
            continue
        local = _kern.greedy_gain_block(pair, cands, per_class, selected)
        picks.extend(feats.idx[pos[local]].tolist())
    return np.asarray(picks, dtype=np.int64)


@dataclass(frozen=True)
class SelectionResult:
    lower_set: np.ndarray       # shortlist, ascending
    validation_set: np.ndarray  # ascending
    training_set: np.ndarray    # ascending, complement of validation_set
    lower_objective: float
    upper_objective: float
    warnings: tuple[str, ...] = ()


def max_utility(
    clean_pool,
    feats: FeatureBank,
    val_per_class: int,
    shortlist_per_class: int,
    n_total: int,
    train_source=None,
    normalized_clean: bool = False,
) -> SelectionResult:
    """Two-stage selection of a compact, informative, likely-clean val set.

    Shortlists shortlist_per_class per class by the coverage objective,
    then keeps val_per_class of those by the class-similarity objective;
    the training set is everything outside the validation set (pass
    train_source to restrict it, e.g. to the pseudo-clean set).
    """
    if val_per_class >= shortlist_per_class:
        raise ConfigError(
            f"val_per_class ({val_per_class}) must be < shortlist_per_class ({shortlist_per_class})"
        )
    clean_pool = np.sort(np.asarray(clean_pool, dtype=np.int64))
    lower = greedy_lower(clean_pool, feats, shortlist_per_class)
    upper = greedy_upper(lower, clean_pool, feats, val_per_class, normalized_clean)
    warnings = []
    pool_classes = feats.classes[feats.positions(clean_pool)]
    upper_classes = feats.classes[feats.positions(upper)] if upper.size else np.array([], dtype=int)
    for c in range(feats.g.shape[1]):
        have = int(np.sum(upper_classes == c))
        avail = int(np.sum(pool_classes == c))
        if avail == 0:
            warnings.append(f"class {c}: absent from candidate pool, validation set lacks it")
        elif have < val_per_class:
            warnings.append(f"class {c}: only {have} of {val_per_class} validation samples available")
    val_sorted = np.sort(upper)
    source = np.arange(n_total, dtype=np.int64) if train_source is None else np.sort(
        np.asarray(train_source, dtype=np.int64)
    )
    train = np.setdiff1d(source, val_sorted)
    return SelectionResult(
        lower_set=np.sort(lower),
        validation_set=val_sorted,
        training_set=train,
        lower_objective=info_objective(lower, clean_pool, feats),
        upper_objective=clean_objective(upper, clean_pool, feats),
        warnings=tuple(warnings),
    )


def brute_force_oracle(
    pool, feats: FeatureBank, objective: str, per_class: int, guard: int = 50_000
):
    """Exact optimum over class-balanced subsets by full enumeration.

    Enumerates every subset taking min(per_class, availability) from each
    class, refusing when the count would exceed `guard`. Ties keep the
    lexicographically smallest subset (enumeration order).
    """
    if objective not in ("info", "clean"):
        raise ValueError("objective must be 'info' or 'clean'")
    pool = np.sort(np.asarray(pool, dtype=np.int64))
    groups = []
    for _c, block in _class_blocks(feats, pool):
        if block.size == 0:
            continue
        take = min(per_class, block.size)
        groups.append(list(combinations(feats.idx[block].tolist(), take)))
    total = math.prod(len(g) for g in groups) if groups else 0
    if total > guard:
        raise ValueError(f"{total} feasible subsets exceed the enumeration guard ({guard})")
    score = info_objective if objective == "info" else clean_objective
    best_set, best_val = np.array([], dtype=np.int64), -math.inf
    for combo in product(*groups):
        subset = np.array([i for grp in combo for i in grp], dtype=np.int64)
        val = score(subset, pool, feats)
        if val > best_val:
            best_set, best_val = subset, val
    return np.sort(best_set), float(best_val)
