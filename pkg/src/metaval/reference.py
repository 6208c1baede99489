"""Independently coded reference implementations used as test oracles.

Nothing here shares code with the fast paths it checks: the forward pass
is scalar loops, the greedy references re-score grown sets from scratch
through the pairwise-utility function, and the finite-difference helpers
probe loss surfaces numerically. Slow on purpose; use small instances.
"""

from __future__ import annotations

import math

import numpy as np

from . import meta, nn, selection


def straight_line_forward(model: "nn.MlpModel", x) -> list[float]:
    """Scalar-loop evaluation of the network's output probabilities."""
    values = [float(v) for v in np.asarray(x)]
    for layer in range(model.n_layers):
        w = model.weights[layer]
        b = model.biases[layer]
        out = []
        for j in range(w.shape[1]):
            s = b[j]
            for i in range(w.shape[0]):
                s += values[i] * w[i, j]
            out.append(s)
        if layer < model.n_layers - 1:
            values = [v if v > 0.0 else 0.0 for v in out]
        else:
            values = out
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def fd_param_grads(model: "nn.MlpModel", x: np.ndarray, targets: np.ndarray, step: float = 1e-5):
    """Central finite differences of mean CE w.r.t. every parameter."""

    def loss_at(m: "nn.MlpModel") -> float:
        probs = nn.forward(m, x).probs
        return float(np.mean(nn.cross_entropy(targets, probs)))

    def perturbed(layer: int, which: str, index, delta: float) -> "nn.MlpModel":
        weights = [w.copy() for w in model.weights]
        biases = [b.copy() for b in model.biases]
        (weights if which == "w" else biases)[layer][index] += delta
        return nn.MlpModel(model.layer_dims, tuple(weights), tuple(biases), model.activation)

    d_w, d_b = [], []
    for layer in range(model.n_layers):
        gw = np.zeros_like(model.weights[layer])
        for index in np.ndindex(gw.shape):
            up = loss_at(perturbed(layer, "w", index, step))
            down = loss_at(perturbed(layer, "w", index, -step))
            gw[index] = (up - down) / (2.0 * step)
        gb = np.zeros_like(model.biases[layer])
        for index in np.ndindex(gb.shape):
            up = loss_at(perturbed(layer, "b", index, step))
            down = loss_at(perturbed(layer, "b", index, -step))
            gb[index] = (up - down) / (2.0 * step)
        d_w.append(gw)
        d_b.append(gb)
    return d_w, d_b


def naive_info_value(subset, pool, feats: "selection.FeatureBank") -> float:
    """Looped re-statement of the coverage objective.

    fsum keeps the value exact, so candidates that tie in real arithmetic
    (mutually-covering pairs do) tie in floats as well and the greedy
    references below can break them by index.
    """
    subset = [int(i) for i in subset]
    terms = []
    for i in pool:
        if i in subset:
            continue
        fi = feats.get(int(i))
        best = None
        for j in subset:
            fj = feats.get(j)
            if fj.label != fi.label:
                continue
            v = selection.pair_utility(fi, fj)
            if best is None or v > best:
                best = v
        terms.append(best if best is not None else 0.0)
    return math.fsum(terms)


def naive_clean_value(subset, pool, feats: "selection.FeatureBank") -> float:
    """Loop re-statement of the class-similarity objective (exact sum)."""
    subset = [int(i) for i in subset]
    terms = []
    for j in subset:
        fj = feats.get(j)
        for i in pool:
            if i in subset:
                continue
            fi = feats.get(int(i))
            if fi.label == fj.label:
                terms.append(float(np.dot(fj.z, fi.z)))
    return math.fsum(terms)


def naive_weight_sum_value(subset, pool, feats: "selection.FeatureBank") -> float:
    """Loop re-statement of the plain pairwise-utility sum (exact sum)."""
    subset = [int(i) for i in subset]
    terms = []
    for j in subset:
        fj = feats.get(j)
        for i in pool:
            if i in subset:
                continue
            terms.append(selection.pair_utility(feats.get(int(i)), fj))
    return math.fsum(terms)


def _naive_greedy(pool, candidate_pool, feats, per_class, value_fn) -> list[int]:
    """Greedy template re-scoring the grown set from scratch each step.

    Classes are visited in ascending order, candidates in ascending index
    order, and a strict > comparison keeps the earliest maximiser. The set
    carries over between classes so cross-class coupling (if the objective
    has any) is honoured.
    """
    pool = sorted(int(i) for i in pool)
    candidate_pool = sorted(int(i) for i in candidate_pool)
    chosen: list[int] = []
    for c in range(feats.g.shape[1]):
        cands = [i for i in candidate_pool if feats.get(i).label == c]
        for _ in range(per_class):
            best, best_val = None, None
            for a in cands:
                if a in chosen:
                    continue
                val = value_fn(chosen + [a], pool, feats)
                if best is None or val > best_val:
                    best, best_val = a, val
            if best is None:
                break
            chosen.append(best)
    return chosen


def naive_greedy_info(pool, feats: "selection.FeatureBank", per_class: int) -> list[int]:
    return _naive_greedy(pool, pool, feats, per_class, naive_info_value)


def naive_greedy_clean(lower_set, pool, feats: "selection.FeatureBank", per_class: int) -> list[int]:
    return _naive_greedy(pool, lower_set, feats, per_class, naive_clean_value)


def naive_greedy_weight_sum(pool, feats: "selection.FeatureBank", per_class: int) -> list[int]:
    return _naive_greedy(pool, pool, feats, per_class, naive_weight_sum_value)


def _val_loss_after_virtual(model, batch: "meta.MetaBatch", weights, gates, eta) -> float:
    probed = meta.virtual_step(model, batch, weights, gates, eta, scope="last_weight")
    probs = nn.forward(probed, batch.val_x).probs
    return float(np.mean(nn.cross_entropy(batch.val_y, probs)))


def fd_weight_gradients(
    model, batch: "meta.MetaBatch", eta: float, fixed_gate: float, delta: float = 1e-3
) -> np.ndarray:
    """d(validation loss)/d(weight_i) at zero weights, through the probe."""
    grads = np.zeros(batch.size)
    for i in range(batch.size):
        bump = np.zeros(batch.size)
        bump[i] = delta
        up = _val_loss_after_virtual(model, batch, bump, fixed_gate, eta)
        down = _val_loss_after_virtual(model, batch, -bump, fixed_gate, eta)
        grads[i] = (up - down) / (2.0 * delta)
    return grads


def fd_gate_gradients(
    model, batch: "meta.MetaBatch", eta: float, fixed_gate: float, delta: float = 1e-2
) -> np.ndarray:
    """d(validation loss)/d(gate_i) around the probe's uniform gate."""
    ones = np.ones(batch.size)
    grads = np.zeros(batch.size)
    for i in range(batch.size):
        gates = np.full(batch.size, fixed_gate)
        gates[i] = fixed_gate + delta
        up = _val_loss_after_virtual(model, batch, ones, gates, eta)
        gates[i] = fixed_gate - delta
        down = _val_loss_after_virtual(model, batch, ones, gates, eta)
        grads[i] = (up - down) / (2.0 * delta)
    return grads
