"""Noise-robust training of small classifiers around an automatically
selected, compact validation set.

The pieces, in pipeline order: data (synthetic sets, noise and imbalance
injection), cleandetect (warm-up, small-loss partitioning, robust moving-
average labels), selection (pairwise-utility greedy validation-set
construction), meta (the bi-level reweighting/gating training step), and
harness (config, orchestration, metrics). reference/checks/benchmark hold
the independent oracles, self-test batteries, and kernel timings.
"""

from .data import (
    Dataset,
    apply_longtail,
    gen_synthetic,
    inject_asymmetric,
    inject_openset,
    inject_symmetric,
    load_csv,
    longtail_sizes,
    mixup,
    save_csv,
)
from .errors import ConfigError, CsvFormatError, DimensionError, SizingError
from .harness import ExperimentConfig, load_config, run_experiment
from .meta import MetaBatch, MetaStepConfig, meta_train_step, pseudo_label, resolve_label
from .nn import LrSchedule, MlpModel, forward, init_mlp, lr_at
from .selection import FeatureBank, build_feature_bank, kernel_backend, max_utility, pair_utility

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CsvFormatError",
    "Dataset",
    "DimensionError",
    "ExperimentConfig",
    "FeatureBank",
    "LrSchedule",
    "MetaBatch",
    "MetaStepConfig",
    "MlpModel",
    "SizingError",
    "__version__",
    "apply_longtail",
    "build_feature_bank",
    "forward",
    "gen_synthetic",
    "init_mlp",
    "inject_asymmetric",
    "inject_openset",
    "inject_symmetric",
    "pair_utility",
    "kernel_backend",
    "load_config",
    "load_csv",
    "longtail_sizes",
    "lr_at",
    "max_utility",
    "meta_train_step",
    "mixup",
    "pseudo_label",
    "resolve_label",
    "run_experiment",
    "save_csv",
]
