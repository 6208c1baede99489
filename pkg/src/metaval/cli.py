"""Command-line front end.

Subcommands: run (one experiment), sweep (a seed range), oracle-check
(numeric self-tests), bench (kernel backend timings). Exit code 0 on
success; failures print a single-line reason to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import benchmark, checks, harness, selection
from .errors import ConfigError, CsvFormatError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metaval",
        description="Noisy-label training with a learned validation set.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write metrics files")
    run.add_argument("--config", required=True, help="flat key=value config file")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--strategy", default=None, choices=harness.STRATEGIES,
                     help="override the selection strategy")
    run.add_argument("--out", default="runs", help="output directory (default: runs)")

    sweep = sub.add_parser("sweep", help="run a range of seeds")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--seeds", required=True, help="inclusive range, e.g. 1..5")
    sweep.add_argument("--strategy", default=None, choices=harness.STRATEGIES)
    sweep.add_argument("--out", default="runs")

    sub.add_parser("oracle-check", help="run the numeric self-check batteries")

    bench = sub.add_parser("bench", help="time the compiled kernels against numpy")
    bench.add_argument("--sizes", default="100,200,400", help="comma-separated block sizes")
    bench.add_argument("--repeats", type=int, default=3)
    return parser


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "strategy", None):
        cfg = replace(cfg, selection_strategy=args.strategy)
    return cfg


def _run_one(cfg: harness.ExperimentConfig, out_dir: str) -> harness.RunResult:
    result = harness.run_experiment(cfg)
    jsonl_path, _ = harness.emit_metrics(result.records, out_dir)
    for warning in dict.fromkeys(result.warnings):
        print(f"warning: {warning}", file=sys.stderr)
    final = result.records[-1]
    print(
        f"seed {cfg.seed} strategy {cfg.selection_strategy}: "
        f"test_acc {final.test_acc:.4f} val_clean {final.val_clean:.4f} "
        f"-> {jsonl_path}"
    )
    return result


def _cmd_run(args) -> int:
    cfg = _load(args)
    _run_one(cfg, args.out)
    return 0


def _parse_seed_range(text: str) -> range:
    lo, sep, hi = text.partition("..")
    if not sep:
        raise ConfigError(f"--seeds wants a..b, got {text!r}")
    try:
        a, b = int(lo), int(hi)
    except ValueError:
        raise ConfigError(f"--seeds wants integer endpoints, got {text!r}") from None
    if b < a:
        raise ConfigError(f"--seeds range is empty: {text!r}")
    return range(a, b + 1)


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    accs = []
    for seed in _parse_seed_range(args.seeds):
        run_cfg = replace(cfg, seed=seed)
        result = _run_one(run_cfg, os.path.join(args.out, f"seed_{seed}"))
        accs.append(result.records[-1].test_acc)
    print(f"mean final test_acc over {len(accs)} seeds: {sum(accs) / len(accs):.4f}")
    return 0


def _cmd_oracle_check(_args) -> int:
    results = checks.run_all()
    for res in results:
        print(f"[{'ok' if res.passed else 'FAIL'}] {res.name}: {res.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"error: {len(failed)} of {len(results)} check batteries failed", file=sys.stderr)
        return 1
    return 0


def _cmd_bench(args) -> int:
    sizes = tuple(int(v) for v in args.sizes.split(",") if v.strip())
    if not sizes:
        raise ConfigError(f"--sizes has no entries: {args.sizes!r}")
    print(f"active backend: {selection.kernel_backend()}")
    print(benchmark.format_rows(benchmark.bench_kernels(sizes, repeats=args.repeats)))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "oracle-check": _cmd_oracle_check,
        "bench": _cmd_bench,
    }[args.command]
    try:
        return handler(args)
    except (ConfigError, CsvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
