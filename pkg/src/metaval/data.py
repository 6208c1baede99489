"""Datasets, label-noise injection, imbalance, and the mixing operators.

A Dataset keeps two label views: observed_labels (what training sees) and
clean_labels (hidden ground truth, used by evaluation and diagnostics
only). Clean labels carry one extra column: a reserved slot for samples
whose true class is outside the C in-distribution classes, so an open-set
sample can never be counted as correctly labeled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import CsvFormatError, SizingError


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray        # (n, d)
    clean_labels: np.ndarray    # (n, C+1) one-hot, last column = out-of-dist slot
    observed_labels: np.ndarray  # (n, C) one-hot
    n_classes: int
    openset_mask: np.ndarray    # (n,) bool

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def observed_classes(self) -> np.ndarray:
        return np.argmax(self.observed_labels, axis=1)

    def clean_classes(self) -> np.ndarray:
        """Hidden true class per row; n_classes marks out-of-distribution."""
        return np.argmax(self.clean_labels, axis=1)

    def correctly_labeled(self) -> np.ndarray:
        """True where the observed label equals the hidden clean label."""
        return self.observed_classes() == self.clean_classes()

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            self.clean_labels[idx],
            self.observed_labels[idx],
            self.n_classes,
            self.openset_mask[idx],
        )


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"          # none | symmetric | asymmetric | openset
    rate: float = 0.0
    pair_map: np.ndarray | None = None   # asymmetric only; len-C class map
    outlier_displacement: float = 5.0    # openset only, in units of est. spread

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("noise rate must be in [0, 1)")
        if self.kind not in ("none", "symmetric", "asymmetric", "openset"):
            raise ValueError(f"unknown noise kind {self.kind!r}")


@dataclass(frozen=True)
class ImbalanceSpec:
    ratio: float = 1.0          # max class size / min class size
    profile: str = "exponential"

    def __post_init__(self):
        if self.ratio < 1.0:
            raise ValueError("imbalance ratio must be >= 1")


def _one_hot(classes: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(classes), width))
    out[np.arange(len(classes)), classes] = 1.0
    return out


def _make_dataset(features: np.ndarray, classes: np.ndarray, n_classes: int) -> Dataset:
    return Dataset(
        features=np.asarray(features, dtype=np.float64),
        clean_labels=_one_hot(classes, n_classes + 1),
        observed_labels=_one_hot(classes, n_classes),
        n_classes=n_classes,
        openset_mask=np.zeros(len(classes), dtype=bool),
    )


def gen_synthetic(
    kind: str, n_classes: int, n_per_class: int, dim: int, spread: float, seed: int
) -> Dataset:
    """Separable-when-tight synthetic classes; rows grouped by class.

    gaussian_blobs puts class means on the unit circle (extra dims zero);
    spirals winds one arm per class. Both add isotropic Gaussian jitter
    with standard deviation `spread`.
    """
    if n_classes < 2 or n_per_class < 1 or dim < 2:
        raise ValueError("need n_classes >= 2, n_per_class >= 1, dim >= 2")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    feats = np.zeros((n_classes * n_per_class, dim))
    for c in range(n_classes):
        rows = slice(c * n_per_class, (c + 1) * n_per_class)
        if kind == "gaussian_blobs":
            center = np.zeros(dim)
            center[0], center[1] = np.cos(angles[c]), np.sin(angles[c])
            feats[rows] = center + spread * rng.standard_normal((n_per_class, dim))
        elif kind == "spirals":
            t = np.linspace(0.0, 1.0, n_per_class)
            radius = 0.25 + 0.75 * t
            theta = angles[c] + 1.5 * np.pi * t
            arm = np.zeros((n_per_class, dim))
            arm[:, 0] = radius * np.cos(theta)
            arm[:, 1] = radius * np.sin(theta)
            feats[rows] = arm + spread * rng.standard_normal((n_per_class, dim))
        else:
            raise ValueError(f"unknown synthetic kind {kind!r}")
    classes = np.repeat(np.arange(n_classes), n_per_class)
    return _make_dataset(feats, classes, n_classes)


def save_csv(ds: Dataset, path, with_clean: bool = True) -> None:
    """Write `f0..f{d-1},label[,clean_label]`; clean_label = C flags open-set."""
    header = [f"f{j}" for j in range(ds.dim)] + ["label"]
    if with_clean:
        header.append("clean_label")
    obs = ds.observed_classes()
    clean = ds.clean_classes()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]] + [str(int(obs[i]))]
            if with_clean:
                row.append(str(int(clean[i])))
            writer.writerow(row)


def load_csv(path, n_classes: int | None = None) -> Dataset:
    """Read the schema written by save_csv; clean_label column is optional.

    With n_classes omitted, the class count is inferred as max(label)+1.
    Malformed rows and out-of-range labels raise CsvFormatError naming the
    1-based file line.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("line 1: empty file") from None
        has_clean = header and header[-1] == "clean_label"
        n_feat = len(header) - 1 - (1 if has_clean else 0)
        if n_feat < 1 or header[:n_feat] != [f"f{j}" for j in range(n_feat)]:
            raise CsvFormatError("line 1: header does not match f0..fk,label[,clean_label]")
        feats, obs, clean = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:n_feat]])
                obs.append(int(row[n_feat]))
                if has_clean:
                    clean.append(int(row[n_feat + 1]))
            except ValueError as exc:
                raise CsvFormatError(f"line {lineno}: {exc}") from None
    if not feats:
        raise CsvFormatError("line 2: no data rows")
    obs_arr = np.array(obs)
    if np.any(obs_arr < 0):
        bad = int(np.argmax(obs_arr < 0))
        raise CsvFormatError(f"line {bad + 2}: negative label")
    C = int(obs_arr.max()) + 1 if n_classes is None else int(n_classes)
    if np.any(obs_arr >= C):
        bad = int(np.argmax(obs_arr >= C))
        raise CsvFormatError(f"line {bad + 2}: label {obs[bad]} out of range [0, {C})")
    clean_arr = np.array(clean) if has_clean else obs_arr.copy()
    if np.any(clean_arr < 0) or np.any(clean_arr > C):
        bad = int(np.argmax((clean_arr < 0) | (clean_arr > C)))
        raise CsvFormatError(f"line {bad + 2}: clean_label {clean[bad]} out of range [0, {C}]")
    return Dataset(
        features=np.array(feats, dtype=np.float64),
        clean_labels=_one_hot(clean_arr, C + 1),
        observed_labels=_one_hot(obs_arr, C),
        n_classes=C,
        openset_mask=clean_arr == C,
    )


def inject_symmetric(ds: Dataset, rate: float, seed: int, include_true: bool = False) -> Dataset:
    """Flip each label with probability `rate` to a uniform other class.

    include_true=True switches to the inclusive convention where the draw
    may land back on the true class (so the mislabeled fraction is below
    the nominal rate).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must be in [0, 1)")
    rng = np.random.default_rng(seed)
    classes = ds.observed_classes()
    flip = rng.random(ds.n) < rate
    draws = rng.integers(0, ds.n_classes if include_true else ds.n_classes - 1, size=ds.n)
    if not include_true:
        # skip over the true class so a flip always mislabels
        draws = np.where(draws >= classes, draws + 1, draws)
    new_classes = np.where(flip, draws, classes)
    return replace(ds, observed_labels=_one_hot(new_classes, ds.n_classes))


def inject_asymmetric(ds: Dataset, rate: float, seed: int, pair_map=None) -> Dataset:
    """Flip each label with probability `rate` to its paired class."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must be in [0, 1)")
    if pair_map is None:
        pair_map = (np.arange(ds.n_classes) + 1) % ds.n_classes
    pair_map = np.asarray(pair_map)
    if pair_map.shape != (ds.n_classes,) or np.any(pair_map < 0) or np.any(pair_map >= ds.n_classes):
        raise ValueError("pair_map must assign every class a class in range")
    rng = np.random.default_rng(seed)
    classes = ds.observed_classes()
    flip = rng.random(ds.n) < rate
    new_classes = np.where(flip, pair_map[classes], classes)
    return replace(ds, observed_labels=_one_hot(new_classes, ds.n_classes))


def inject_openset(
    ds: Dataset, rate: float, seed: int, displacement: float = 5.0, outlier_fn=None
) -> Dataset:
    """Replace a rate-fraction of samples with out-of-distribution points.

    Their features come from a Gaussian centered `displacement` estimated
    spreads away from every class mean, their observed label is a uniform
    in-distribution class, and their hidden label moves to the reserved
    out-of-distribution slot. outlier_fn(rng, count, dim) overrides the
    feature draw.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must be in [0, 1)")
    rng = np.random.default_rng(seed)
    hit = rng.random(ds.n) < rate
    count = int(hit.sum())
    features = ds.features.copy()
    clean = ds.clean_labels.copy()
    observed = ds.observed_labels.copy()
    mask = ds.openset_mask.copy()
    if count:
        classes = ds.observed_classes()
        means = np.stack([
            ds.features[classes == c].mean(axis=0) if np.any(classes == c) else np.zeros(ds.dim)
            for c in range(ds.n_classes)
        ])
        scale = float(np.mean([
            ds.features[classes == c].std() for c in range(ds.n_classes) if np.any(classes == c)
        ]))
        scale = max(scale, 1e-6)
        if outlier_fn is None:
            centroid = means.mean(axis=0)
            radius = float(np.max(np.linalg.norm(means - centroid, axis=1)))
            direction = np.zeros(ds.dim)
            direction[0] = 1.0
            center = centroid + (radius + displacement * scale) * direction
            draws = center + scale * rng.standard_normal((count, ds.dim))
        else:
            draws = np.asarray(outlier_fn(rng, count, ds.dim), dtype=np.float64)
        rows = np.flatnonzero(hit)
        features[rows] = draws
        observed[rows] = _one_hot(rng.integers(0, ds.n_classes, size=count), ds.n_classes)
        clean[rows] = 0.0
        clean[rows, ds.n_classes] = 1.0
        mask[rows] = True
    return Dataset(features, clean, observed, ds.n_classes, mask)


def longtail_sizes(n_max: int, ratio: float, n_classes: int) -> np.ndarray:
    """Exponential size profile round(n_max * ratio^(-c/(C-1)))."""
    c = np.arange(n_classes)
    return np.rint(n_max * ratio ** (-c / (n_classes - 1))).astype(int)


def apply_longtail(ds: Dataset, spec: ImbalanceSpec, seed: int) -> Dataset:
    """Subsample classes to an exponential size profile, keeping row order."""
    rng = np.random.default_rng(seed)
    classes = ds.observed_classes()
    counts = np.bincount(classes, minlength=ds.n_classes)
    targets = longtail_sizes(int(counts.max()), spec.ratio, ds.n_classes)
    keep = np.zeros(ds.n, dtype=bool)
    for c in range(ds.n_classes):
        rows = np.flatnonzero(classes == c)
        if len(rows) < targets[c]:
            raise SizingError(
                f"class {c} has {len(rows)} samples, needs {targets[c]} for ratio {spec.ratio}"
            )
        keep[rng.choice(rows, size=targets[c], replace=False)] = True
    return ds.subset(np.flatnonzero(keep))


def augment(x: np.ndarray, strength: float, seed: int) -> np.ndarray:
    """x plus isotropic Gaussian jitter with standard deviation `strength`."""
    if strength <= 0:
        raise ValueError("strength must be positive")
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    return x + strength * rng.standard_normal(x.shape)


def augment_with(x: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Stream-friendly variant of augment for use inside the training loop."""
    return np.asarray(x, dtype=np.float64) + strength * rng.standard_normal(np.shape(x))


def mixup(train_pair, val_pair, alpha: float, seed: int | None = None, *,
          rng: np.random.Generator | None = None, beta: float | None = None):
    """Convex combination of a training and a validation pair.

    The mixing weight is Beta(alpha, alpha) unless `beta` pins it (test
    hook). Labels must live on the simplex so the output label does too.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x_a, y_a = train_pair
    x_b, y_b = val_pair
    if beta is None:
        if rng is None:
            rng = np.random.default_rng(seed)
        beta = float(rng.beta(alpha, alpha))
    x_mix = beta * np.asarray(x_a, dtype=np.float64) + (1.0 - beta) * np.asarray(x_b, dtype=np.float64)
    y_mix = beta * np.asarray(y_a, dtype=np.float64) + (1.0 - beta) * np.asarray(y_b, dtype=np.float64)
    return x_mix, y_mix
