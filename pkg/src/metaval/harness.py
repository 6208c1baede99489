"""Experiment orchestration: config, the full training procedure, ablation
selection strategies, evaluation, and metrics emission.

A run is a pure function of (config, seed): every random draw comes from
named child streams of one seed sequence, so re-running a config gives
byte-identical metrics files. Hidden clean labels feed metrics and
evaluation only; the training path never reads them (a test corrupts them
and asserts identical trajectories).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from . import cleandetect, data, meta, nn, selection
from .errors import ConfigError

STRATEGIES = ("max_utility", "random", "most_confident", "weight_only", "info_only")


@dataclass
class ExperimentConfig:
    # dataset
    dataset_kind: str = "gaussian_blobs"   # gaussian_blobs | spirals | csv
    csv_path: str = ""
    test_csv_path: str = ""
    n_classes: int = 4
    n_per_class: int = 500
    dim: int = 2
    spread: float = 0.25
    test_n_per_class: int = 250
    # corruption
    noise_kind: str = "symmetric"          # none | symmetric | asymmetric | openset
    noise_rate: float = 0.4
    pair_map: str = "cyclic"               # or comma-separated class map
    openset_displacement: float = 5.0
    symmetric_include_true: bool = False
    imbalance_ratio: float = 10.0
    # model + schedule
    hidden_dims: tuple = (32, 32)
    eta_max: float = 0.3
    eta_min: float = 0.001
    cycle_len: int = 250
    cycle_mult: float = 1.5
    # loop
    iterations: int = 1020
    batch_size: int = 50
    robust_start: int = -1       # -1 resolves to iterations // 4
    update_interval: int = -1    # -1 resolves to one epoch of steps
    lr_threshold: float = -1.0   # -1 resolves to (eta_max + eta_min) / 2
    # meta + selection
    ema_decay: float = 0.9
    window_epochs: int = 5
    candidates_per_class: int = 200
    val_per_class: int = 10
    shortlist_per_class: int = 50
    mix_weight: float = 5.0
    consistency_weight: float = 20.0
    fixed_gate: float = 0.9
    mixup_alpha: float = 1.0
    augment_strength: float = 0.1
    weight_step: float = 1.0
    selection_strategy: str = "max_utility"
    # warm-up
    warmup_epochs: int = 60
    warmup_patience: int = 5
    warmup_eta: float = 0.1
    warmup_batch: int = 64
    # variants (off-default sensitivity switches)
    gate_sign_flip: bool = False
    train_from_clean_only: bool = False
    selection_use_robust_targets: bool = False
    normalized_clean: bool = False
    seed: int = 1

    def validate(self) -> None:
        if self.selection_strategy not in STRATEGIES:
            raise ConfigError(f"unknown selection_strategy {self.selection_strategy!r}")
        if self.val_per_class >= self.shortlist_per_class:
            raise ConfigError("val_per_class must be < shortlist_per_class")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if 0 < self.iterations < self.update_interval:
            raise ConfigError("update_interval must be <= iterations")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError("noise_rate must be in [0, 1)")
        if self.imbalance_ratio < 1.0:
            raise ConfigError("imbalance_ratio must be >= 1")
        if not 0.0 <= self.fixed_gate <= 1.0:
            raise ConfigError("fixed_gate must be in [0, 1]")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError("ema_decay must be in [0, 1]")
        if min(self.mix_weight, self.consistency_weight) < 0:
            raise ConfigError("loss term weights must be >= 0")
        if self.dataset_kind == "csv" and not self.csv_path:
            raise ConfigError("dataset_kind=csv needs csv_path")
        if not 0 <= self.eta_min < self.eta_max:
            raise ConfigError("need 0 <= eta_min < eta_max")

    def meta_config(self) -> meta.MetaStepConfig:
        return meta.MetaStepConfig(
            fixed_gate=self.fixed_gate,
            weight_step=self.weight_step,
            mix_weight=self.mix_weight,
            consistency_weight=self.consistency_weight,
            mixup_alpha=self.mixup_alpha,
            augment_strength=self.augment_strength,
            gate_sign_flip=self.gate_sign_flip,
        )

    def pair_map_array(self, n_classes: int) -> np.ndarray:
        if self.pair_map == "cyclic":
            return (np.arange(n_classes) + 1) % n_classes
        try:
            arr = np.array([int(v) for v in self.pair_map.split(",")])
        except ValueError:
            raise ConfigError(f"pair_map must be 'cyclic' or comma ints, got {self.pair_map!r}") from None
        return arr


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    """Build a config from string values, with per-field type coercion."""
    cfg = ExperimentConfig()
    known = {f.name: f for f in fields(ExperimentConfig)}
    values = {}
    for key, raw in mapping.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        try:
            if isinstance(current, bool):
                values[key] = _parse_bool(raw)
            elif isinstance(current, int):
                values[key] = int(raw)
            elif isinstance(current, float):
                values[key] = float(raw)
            elif isinstance(current, tuple):
                values[key] = _parse_int_tuple(raw)
            else:
                values[key] = raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return replace(cfg, **values)


def load_config(path) -> ExperimentConfig:
    """Parse flat `key = value` lines; `#` starts a comment."""
    mapping = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = text.split("=", 1)
            mapping[key.strip()] = value.strip()
    return config_from_mapping(mapping)


@dataclass(frozen=True)
class MetricsRecord:
    """One emitted row; field names are exactly the JSONL keys."""

    iter: int
    test_acc: float
    val_clean: float
    dc_precision: float
    dc_recall: float
    lr: float
    weight_clean_mean: float
    weight_noisy_mean: float
    info_obj: float
    clean_obj: float

    KEYS = (
        "iter", "test_acc", "val_clean", "dc_precision", "dc_recall", "lr",
        "weight_clean_mean", "weight_noisy_mean", "info_obj", "clean_obj",
    )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.KEYS}


def emit_metrics(records, out_dir) -> tuple[str, str]:
    """Write metrics.jsonl and metrics.csv under out_dir; returns the paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        jsonl_path = os.path.join(out_dir, "metrics.jsonl")
        csv_path = os.path.join(out_dir, "metrics.csv")
        with open(jsonl_path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict()) + "\n")
        with open(csv_path, "w") as fh:
            fh.write(",".join(MetricsRecord.KEYS) + "\n")
            for rec in records:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in (getattr(rec, k) for k in MetricsRecord.KEYS)) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics under {out_dir!r}: {exc}") from exc
    return jsonl_path, csv_path


def evaluate(model: "nn.MlpModel", ds: "data.Dataset") -> float:
    """Fraction of samples whose predicted class matches the hidden label."""
    preds = np.argmax(nn.forward(model, ds.features).probs, axis=1)
    return float(np.mean(preds == ds.clean_classes()))


def build_datasets(cfg: ExperimentConfig, seeds) -> tuple["data.Dataset", "data.Dataset"]:
    """Training set (imbalanced then noisy) and a clean balanced test set."""
    if cfg.dataset_kind == "csv":
        train = data.load_csv(cfg.csv_path)
        if not cfg.test_csv_path:
            raise ConfigError("dataset_kind=csv needs test_csv_path")
        test = data.load_csv(cfg.test_csv_path, n_classes=train.n_classes)
    else:
        train = data.gen_synthetic(
            cfg.dataset_kind, cfg.n_classes, cfg.n_per_class, cfg.dim, cfg.spread, seeds["data_train"]
        )
        test = data.gen_synthetic(
            cfg.dataset_kind, cfg.n_classes, cfg.test_n_per_class, cfg.dim, cfg.spread, seeds["data_test"]
        )
    if cfg.imbalance_ratio > 1.0:
        train = data.apply_longtail(train, data.ImbalanceSpec(cfg.imbalance_ratio), seeds["longtail"])
    if cfg.noise_kind == "symmetric" and cfg.noise_rate > 0:
        train = data.inject_symmetric(train, cfg.noise_rate, seeds["noise"], cfg.symmetric_include_true)
    elif cfg.noise_kind == "asymmetric" and cfg.noise_rate > 0:
        train = data.inject_asymmetric(
            train, cfg.noise_rate, seeds["noise"], cfg.pair_map_array(train.n_classes)
        )
    elif cfg.noise_kind == "openset" and cfg.noise_rate > 0:
        train = data.inject_openset(train, cfg.noise_rate, seeds["noise"], cfg.openset_displacement)
    return train, test


def _derive_seeds(seed: int) -> dict:
    names = (
        "data_train", "data_test", "longtail", "noise", "warmup",
        "model_init", "batches", "loss", "selection",
    )
    state = np.random.SeedSequence(seed).generate_state(len(names), dtype=np.uint64)
    return {name: int(v) for name, v in zip(names, state)}


def select_validation(
    cfg: ExperimentConfig,
    ds: "data.Dataset",
    model: "nn.MlpModel",
    clean_idx: np.ndarray,
    robust_labels: np.ndarray,
    event_seed: int,
) -> "selection.SelectionResult":
    """Pick the validation set per the configured strategy.

    max_utility / weight_only / info_only score over the label-consistent
    candidate subset; random / most_confident draw straight from the
    pseudo-clean set.
    """
    strategy = cfg.selection_strategy
    M = cfg.val_per_class
    train_source = clean_idx if cfg.train_from_clean_only else None
    warnings: list[str] = []

    if strategy in ("max_utility", "weight_only", "info_only"):
        cands, cand_warnings = cleandetect.build_candidate_subset(
            clean_idx, ds.observed_labels, robust_labels, cfg.candidates_per_class, event_seed
        )
        warnings.extend(cand_warnings)
        if cands.size == 0:
            warnings.append("candidate subset empty, falling back to the pseudo-clean set")
            cands = np.sort(np.asarray(clean_idx, dtype=np.int64))
        bank = selection.build_feature_bank(
            model, ds, cands, robust_labels if cfg.selection_use_robust_targets else None
        )
        if strategy == "max_utility":
            result = selection.max_utility(
                cands, bank, M, cfg.shortlist_per_class, ds.n,
                train_source=train_source, normalized_clean=cfg.normalized_clean,
            )
            return replace(result, warnings=tuple(warnings) + result.warnings)
        if strategy == "info_only":
            picks = selection.greedy_lower(cands, bank, M)
        else:
            picks = selection.greedy_weight_sum(cands, bank, M)
        pool = cands
    else:
        pool = np.sort(np.asarray(clean_idx, dtype=np.int64))
        bank = selection.build_feature_bank(model, ds, pool)
        pool_classes = ds.observed_classes()[pool]
        picked = []
        if strategy == "random":
            rng = np.random.default_rng(event_seed)
            for c in range(ds.n_classes):
                members = pool[pool_classes == c]
                if members.size == 0:
                    warnings.append(f"class {c}: absent from pseudo-clean set")
                    continue
                picked.extend(rng.choice(members, size=min(M, members.size), replace=False).tolist())
        else:  # most_confident
            conf = np.max(nn.forward(model, ds.features[pool]).probs, axis=1)
            for c in range(ds.n_classes):
                rows = np.flatnonzero(pool_classes == c)
                if rows.size == 0:
                    warnings.append(f"class {c}: absent from pseudo-clean set")
                    continue
                order = rows[np.lexsort((pool[rows], -conf[rows]))]
                picked.extend(pool[order[: min(M, rows.size)]].tolist())
        picks = np.asarray(picked, dtype=np.int64)

    val = np.sort(picks)
    source = np.arange(ds.n, dtype=np.int64) if train_source is None else np.sort(
        np.asarray(train_source, dtype=np.int64)
    )
    return selection.SelectionResult(
        lower_set=val,
        validation_set=val,
        training_set=np.setdiff1d(source, val),
        lower_objective=selection.info_objective(val, pool, bank),
        upper_objective=selection.clean_objective(val, pool, bank, cfg.normalized_clean),
        warnings=tuple(warnings),
    )


@dataclass
class RunResult:
    records: list
    model: "nn.MlpModel"
    selection: "selection.SelectionResult"
    clean_idx: np.ndarray
    warnings: list
    config: ExperimentConfig


class _BatchSampler:
    """Seeded epoch-shuffled batches over a mutable training index set."""

    def __init__(self, rng: np.random.Generator, batch_size: int):
        self.rng = rng
        self.batch_size = batch_size
        self.rows = np.array([], dtype=np.int64)
        self.order = np.array([], dtype=np.int64)
        self.ptr = 0

    def reset(self, rows: np.ndarray) -> None:
        self.rows = np.asarray(rows, dtype=np.int64)
        self.order = self.rng.permutation(self.rows)
        self.ptr = 0

    def next(self) -> np.ndarray:
        if self.ptr >= len(self.order):
            self.order = self.rng.permutation(self.rows)
            self.ptr = 0
        batch = self.order[self.ptr : self.ptr + self.batch_size]
        self.ptr += len(batch)
        return batch


class _GroupMean:
    """Interval accumulator for per-group weight means; empty group -> 0.0."""

    def __init__(self):
        self.sums = [0.0, 0.0]
        self.counts = [0, 0]

    def add(self, values: np.ndarray, group: np.ndarray) -> None:
        for g in (0, 1):
            picked = values[group == g]
            self.sums[g] += float(picked.sum())
            self.counts[g] += picked.size

    def means(self) -> tuple[float, float]:
        return tuple(
            self.sums[g] / self.counts[g] if self.counts[g] else 0.0 for g in (0, 1)
        )


def run_experiment(cfg: ExperimentConfig, train_ds=None, test_ds=None) -> RunResult:
    """The full training procedure; see module docstring for determinism.

    Outline: warm-up -> small-loss partition -> robust labels initialized
    to the observed labels -> initial selection -> model reinitialized ->
    loop of meta steps with robust-label updates (epoch boundaries, gated
    on progress and lr), detector re-runs (lr-cycle ends), and re-selection
    plus one metrics record every update_interval iterations.
    train_ds/test_ds injection is a test hook bypassing dataset build.
    """
    cfg.validate()
    seeds = _derive_seeds(cfg.seed)
    if train_ds is None or test_ds is None:
        train_ds, test_ds = build_datasets(cfg, seeds)
    n = train_ds.n
    dims = (train_ds.dim, *cfg.hidden_dims, train_ds.n_classes)

    T = cfg.iterations
    T_update = cfg.update_interval if cfg.update_interval > 0 else max(1, round(n / cfg.batch_size))
    if 0 < T < T_update:
        T_update = T
    robust_start = cfg.robust_start if cfg.robust_start >= 0 else T // 4
    lr_threshold = cfg.lr_threshold if cfg.lr_threshold > 0 else (cfg.eta_max + cfg.eta_min) / 2
    schedule = nn.LrSchedule(cfg.eta_max, cfg.eta_min, cfg.cycle_len, cfg.cycle_mult)
    meta_cfg = cfg.meta_config()

    model_rng = np.random.default_rng(seeds["model_init"])
    warm = cleandetect.warmup_train(
        nn.init_mlp(dims, model_rng), train_ds, cfg.warmup_epochs, cfg.warmup_patience,
        cfg.warmup_eta, cfg.warmup_batch, seed=seeds["warmup"],
    )
    part = cleandetect.partition_small_loss(cleandetect.per_sample_losses(warm, train_ds))
    clean_idx = part.clean_idx

    states = [
        cleandetect.new_sample_state(train_ds.observed_labels[i], cfg.window_epochs)
        for i in range(n)
    ]

    sel_seed_rng = np.random.default_rng(seeds["selection"])
    warnings: list[str] = []

    def robust_matrix() -> np.ndarray:
        return np.stack([s.robust_label for s in states])

    def reselect(current_model) -> "selection.SelectionResult":
        result = select_validation(
            cfg, train_ds, current_model, clean_idx, robust_matrix(),
            int(sel_seed_rng.integers(0, 2**63)),
        )
        warnings.extend(result.warnings)
        return result

    sel = reselect(warm)
    model = nn.init_mlp(dims, model_rng)

    sampler = _BatchSampler(np.random.default_rng(seeds["batches"]), cfg.batch_size)
    sampler.reset(sel.training_set)
    loss_rng = np.random.default_rng(seeds["loss"])
    correct = train_ds.correctly_labeled()

    records: list[MetricsRecord] = []
    acc = _GroupMean()

    def make_record(iteration: int, lr: float) -> MetricsRecord:
        truly_clean = correct
        dc_hits = int(np.sum(truly_clean[clean_idx]))
        noisy_mean, clean_mean = acc.means()
        return MetricsRecord(
            iter=iteration,
            test_acc=evaluate(model, test_ds),
            val_clean=float(np.mean(truly_clean[sel.validation_set])) if sel.validation_set.size else 0.0,
            dc_precision=dc_hits / len(clean_idx) if len(clean_idx) else 0.0,
            dc_recall=dc_hits / int(truly_clean.sum()) if truly_clean.sum() else 0.0,
            lr=lr,
            weight_clean_mean=clean_mean,
            weight_noisy_mean=noisy_mean,
            info_obj=sel.lower_objective,
            clean_obj=sel.upper_objective,
        )

    recorded_at = -1
    for t in range(1, T + 1):
        step_idx = t - 1
        rows = sampler.next()
        batch = meta.MetaBatch(
            train_idx=rows,
            x=train_ds.features[rows],
            y=train_ds.observed_labels[rows],
            val_idx=sel.validation_set,
            val_x=train_ds.features[sel.validation_set],
            val_y=train_ds.observed_labels[sel.validation_set],
        )
        model, report = meta.meta_train_step(model, batch, schedule, step_idx, meta_cfg, loss_rng)
        acc.add(report.sample_weights, correct[rows].astype(int))

        if nn.at_cycle_end(schedule, step_idx):
            part = cleandetect.partition_small_loss(cleandetect.per_sample_losses(model, train_ds))
            clean_idx = part.clean_idx

        if t % T_update == 0:
            probs_now = nn.forward(model, train_ds.features).probs
            for i in range(n):
                cleandetect.push_prediction(states[i], probs_now[i])
            if t > robust_start and nn.lr_at(schedule, step_idx) < lr_threshold:
                for i in clean_idx:
                    states[i] = cleandetect.update_moving_avg(states[i], cfg.ema_decay)
            sel = reselect(model)
            sampler.reset(sel.training_set)
            records.append(make_record(t, nn.lr_at(schedule, step_idx)))
            acc = _GroupMean()
            recorded_at = t

    if recorded_at != T:
        records.append(make_record(T, nn.lr_at(schedule, max(T - 1, 0))))

    return RunResult(records, model, sel, clean_idx, warnings, cfg)


def run_baseline(cfg: ExperimentConfig) -> RunResult:
    """run_experiment for a non-default strategy (same machinery)."""
    if cfg.selection_strategy == "max_utility":
        raise ConfigError("run_baseline expects a strategy other than max_utility")
    return run_experiment(cfg)
