"""Self-check batteries behind the CLI's oracle-check subcommand.

Three numeric cross-examinations, each pitting a fast path against an
independently coded oracle from reference.py:

  * backward pass vs central finite differences over every parameter,
  * analytic per-sample weight/gate derivatives vs finite differences of
    validation loss through the one-step-ahead probe,
  * incremental greedy selection vs a from-scratch re-scoring greedy,
    plus an exhaustive enumeration bound on small instances.

The acceptance tests call these directly, so thresholds live here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import meta, nn, reference, selection


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rel_gap(a: np.ndarray, b: np.ndarray, floor: float) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def synthetic_bank(
    rng: np.random.Generator,
    n_classes: int,
    n_samples: int,
    feat_dim: int,
    nonneg_features: bool = False,
) -> "selection.FeatureBank":
    """Random feature bank with gappy original ids, for selection checks."""
    if nonneg_features:
        z = rng.uniform(0.0, 1.0, size=(n_samples, feat_dim))
    else:
        z = rng.standard_normal((n_samples, feat_dim))
    labels = rng.integers(0, n_classes, size=n_samples)
    probs = nn.softmax(rng.standard_normal((n_samples, n_classes)))
    g = probs - np.eye(n_classes)[labels]
    ids = np.sort(rng.choice(4 * n_samples, size=n_samples, replace=False)).astype(np.int64)
    return selection.FeatureBank(z, g, labels.astype(np.int64), ids)


def random_meta_instance(rng: np.random.Generator, max_params: int = 200):
    """Small random (model, batch) pair for gradient-fidelity probing."""
    while True:
        dims = (
            int(rng.integers(2, 4)),
            int(rng.integers(3, 6)),
            int(rng.integers(3, 5)),
        )
        model = nn.init_mlp(dims, rng)
        if model.n_params() <= max_params:
            break
    b = int(rng.integers(4, 9))
    v = int(rng.integers(3, 7))
    n_in, n_cls = dims[0], dims[-1]
    eye = np.eye(n_cls)
    batch = meta.MetaBatch(
        train_idx=np.arange(b, dtype=np.int64),
        x=rng.standard_normal((b, n_in)),
        y=eye[rng.integers(0, n_cls, size=b)],
        val_idx=np.arange(b, b + v, dtype=np.int64),
        val_x=rng.standard_normal((v, n_in)),
        val_y=eye[rng.integers(0, n_cls, size=v)],
    )
    return model, batch


def check_backward(n_seeds: int = 20, step: float = 1e-5, rtol: float = 1e-4) -> CheckResult:
    """Every parameter gradient of mean CE vs central finite differences."""
    dim_choices = [(2, 4, 3), (3, 5, 3), (2, 6, 4), (4, 4, 4, 3)]
    worst = 0.0
    for seed in range(n_seeds):
        rng = np.random.default_rng(10_000 + seed)
        dims = dim_choices[seed % len(dim_choices)]
        model = nn.init_mlp(dims, rng)
        assert model.n_params() <= 100
        x = rng.standard_normal((6, dims[0]))
        if seed % 3 == 0:
            targets = rng.dirichlet(np.ones(dims[-1]), size=6)
        else:
            targets = np.eye(dims[-1])[rng.integers(0, dims[-1], size=6)]
        bundle = nn.backward(model, nn.forward(model, x), targets)
        fd_w, fd_b = reference.fd_param_grads(model, x, targets, step)
        for an, fd in zip(bundle.d_weights + bundle.d_biases, tuple(fd_w) + tuple(fd_b)):
            worst = max(worst, _rel_gap(np.asarray(an), fd, floor=1e-4))
    passed = worst < rtol
    return CheckResult(
        "backward-vs-finite-difference",
        passed,
        f"max relative gap {worst:.3e} over {n_seeds} seeds (tolerance {rtol:g})",
    )


def check_meta_gradients(
    n_instances: int = 25, eta: float = 1e-3, rtol: float = 1e-3, gate_floor: float = 1e-8
) -> CheckResult:
    """Analytic weight/gate derivatives vs finite differences through the probe.

    The weight comparison is dL_val/d(weight_i) at zero weights, where the
    analytic value is -(eta/B) * raw score. The gate comparison checks the
    sign of dL_val/d(gate_i) around the uniform probe gate wherever the
    analytic magnitude clears gate_floor.
    """
    fixed_gate = 0.9
    worst = 0.0
    sign_mismatches = 0
    signs_checked = 0
    for inst in range(n_instances):
        rng = np.random.default_rng(20_000 + inst)
        model, batch = random_meta_instance(rng)
        feats = meta.validation_features(model, batch.val_x, batch.val_y)
        raw = meta.weight_scores(batch, model, feats, 1.0, fixed_gate)
        analytic = -(eta / batch.size) * raw
        fd = reference.fd_weight_gradients(model, batch, eta, fixed_gate, delta=1e-3)
        # FD noise sits near 1e-13 here, far under this floor
        worst = max(worst, _rel_gap(analytic, fd, floor=1e-9))

        probed = meta.virtual_step(model, batch, np.ones(batch.size), fixed_gate, eta)
        probed_feats = meta.validation_features(probed, batch.val_x, batch.val_y)
        d = meta.gate_scores(batch, model, probed_feats, eta)
        fd_gate = reference.fd_gate_gradients(model, batch, eta, fixed_gate, delta=1e-2)
        strong = np.abs(d) > gate_floor
        signs_checked += int(np.sum(strong))
        sign_mismatches += int(np.sum(np.sign(d[strong]) != np.sign(fd_gate[strong])))
    passed = worst < rtol and sign_mismatches == 0
    return CheckResult(
        "meta-gradient-fidelity",
        passed,
        f"weight max relative gap {worst:.3e} (tolerance {rtol:g}); "
        f"gate sign mismatches {sign_mismatches}/{signs_checked} over {n_instances} instances",
    )


def check_greedy(n_instances: int = 100, n_brute: int = 40) -> CheckResult:
    """Incremental greedy vs naive re-scoring greedy, plus enumeration ratios.

    The sequence comparison is exact equality (same picks, same order) for
    all three greedy flavours. The enumeration part logs how far greedy
    lands from the true optimum on tiny instances; no threshold, the spread
    is informational.
    """
    mismatches = 0
    for inst in range(n_instances):
        rng = np.random.default_rng(30_000 + inst)
        n_classes = int(rng.integers(2, 5))
        n = int(rng.integers(3 * n_classes, 41))
        bank = synthetic_bank(rng, n_classes, n, int(rng.integers(2, 5)))
        pool = bank.idx
        m = int(rng.integers(1, 4))
        k = m + int(rng.integers(1, 4))

        lower = selection.greedy_lower(pool, bank, k)
        if lower.tolist() != reference.naive_greedy_info(pool, bank, k):
            mismatches += 1
            continue
        upper = selection.greedy_upper(lower, pool, bank, m)
        if upper.tolist() != reference.naive_greedy_clean(lower, pool, bank, m):
            mismatches += 1
            continue
        flat = selection.greedy_weight_sum(pool, bank, m)
        if flat.tolist() != reference.naive_greedy_weight_sum(pool, bank, m):
            mismatches += 1

    ratios = {"info": [], "clean": []}
    for inst in range(n_brute):
        rng = np.random.default_rng(40_000 + inst)
        n_classes = int(rng.integers(2, 4))
        n = int(rng.integers(4 * n_classes, 6 * n_classes + 1))
        bank = synthetic_bank(rng, n_classes, n, 3, nonneg_features=True)
        pool = bank.idx
        greedy_info = selection.greedy_lower(pool, bank, 2)
        _, best_info = selection.brute_force_oracle(pool, bank, "info", 2)
        got = selection.info_objective(greedy_info, pool, bank)
        if best_info > 1e-9:
            ratios["info"].append(got / best_info)
        greedy_clean = selection.greedy_upper(pool, pool, bank, 2)
        _, best_clean = selection.brute_force_oracle(pool, bank, "clean", 2)
        got = selection.clean_objective(greedy_clean, pool, bank)
        if best_clean > 1e-9:
            ratios["clean"].append(got / best_clean)

    stats = "; ".join(
        f"{name} greedy/optimal mean {np.mean(vals):.4f} min {np.min(vals):.4f} (n={len(vals)})"
        if vals
        else f"{name}: no positive-optimum instances"
        for name, vals in ratios.items()
    )
    passed = mismatches == 0
    return CheckResult(
        "greedy-vs-reference",
        passed,
        f"{mismatches}/{n_instances} sequence mismatches; {stats}",
    )


def run_all() -> list[CheckResult]:
    return [check_backward(), check_meta_gradients(), check_greedy()]
