"""Experiment orchestration, config parsing, metrics files, and the CLI."""

import json
import math

import numpy as np
import pytest

from metaval import cli, data, harness, nn
from metaval.errors import ConfigError

from conftest import random_model


def tiny_config(**overrides):
    base = dict(
        n_classes=3, n_per_class=40, dim=2, spread=0.25, test_n_per_class=30,
        noise_kind="symmetric", noise_rate=0.3, imbalance_ratio=1.0,
        hidden_dims=(8,), eta_max=0.3, eta_min=0.001, cycle_len=10, cycle_mult=1.0,
        iterations=12, batch_size=20, candidates_per_class=20,
        val_per_class=2, shortlist_per_class=6, window_epochs=2,
        warmup_epochs=8, warmup_patience=2, warmup_batch=32, seed=3,
    )
    base.update(overrides)
    return harness.ExperimentConfig(**base)


def write_tiny_config(path, **overrides):
    cfg = tiny_config(**overrides)
    lines = ["# tiny preset for tests"]
    for key in (
        "n_classes", "n_per_class", "test_n_per_class", "noise_rate",
        "imbalance_ratio", "cycle_len", "iterations", "batch_size",
        "candidates_per_class", "val_per_class", "shortlist_per_class",
        "window_epochs", "warmup_epochs", "warmup_patience", "seed",
    ):
        lines.append(f"{key} = {getattr(cfg, key)}")
    lines.append("hidden_dims = " + ",".join(str(v) for v in cfg.hidden_dims))
    lines.append(f"cycle_mult = {cfg.cycle_mult}")
    path.write_text("\n".join(lines) + "\n")
    return path


def sample_records():
    return [
        harness.MetricsRecord(6, 0.5, 0.75, 0.8, 0.7, 0.123456789012345, 0.01, 0.002, 3.5, -1.25),
        harness.MetricsRecord(12, 0.625, 1.0, 0.9, 0.65, 0.001, 0.02, 0.001, 4.0, 0.0),
    ]


class TestConfig:
    def test_defaults_validate(self):
        harness.ExperimentConfig().validate()

    def test_invariant_violations(self):
        cases = [
            dict(selection_strategy="mystery"),
            dict(val_per_class=5, shortlist_per_class=5),
            dict(batch_size=0),
            dict(iterations=-1),
            dict(noise_rate=1.0),
            dict(imbalance_ratio=0.5),
            dict(eta_min=0.4, eta_max=0.3),
        ]
        for bad in cases:
            with pytest.raises(ConfigError):
                tiny_config(**bad).validate()

    def test_load_config_parses_and_coerces(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment line\n"
            "n_classes = 3\n"
            "hidden_dims = 8,8   # inline comment\n"
            "noise_rate = 0.25\n"
            "gate_sign_flip = true\n"
            "\n"
        )
        cfg = harness.load_config(path)
        assert cfg.n_classes == 3
        assert cfg.hidden_dims == (8, 8)
        assert cfg.noise_rate == 0.25
        assert cfg.gate_sign_flip is True

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("learning_rate = 0.1\n")
        with pytest.raises(ConfigError, match="learning_rate"):
            harness.load_config(path)

    def test_malformed_line_names_position(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("n_classes = 3\njust a string\n")
        with pytest.raises(ConfigError, match=":2"):
            harness.load_config(path)


class TestMetrics:
    def test_schema_keys(self):
        assert harness.MetricsRecord.KEYS == (
            "iter", "test_acc", "val_clean", "dc_precision", "dc_recall", "lr",
            "weight_clean_mean", "weight_noisy_mean", "info_obj", "clean_obj",
        )

    def test_empty_stream(self, tmp_path):
        jsonl, csv = harness.emit_metrics([], tmp_path / "out")
        assert open(jsonl).read() == ""
        assert open(csv).read().strip() == ",".join(harness.MetricsRecord.KEYS)

    def test_round_trip(self, tmp_path):
        records = sample_records()
        jsonl, csv = harness.emit_metrics(records, tmp_path / "out")
        with open(jsonl) as fh:
            parsed = [json.loads(line) for line in fh]
        assert parsed == [r.to_dict() for r in records]
        rows = open(csv).read().splitlines()
        assert rows[0] == ",".join(harness.MetricsRecord.KEYS)
        # repr floats survive the text round trip exactly
        values = rows[1].split(",")
        assert float(values[5]) == records[0].lr

    def test_byte_identical_reruns(self, tmp_path):
        records = sample_records()
        a_jsonl, a_csv = harness.emit_metrics(records, tmp_path / "a")
        b_jsonl, b_csv = harness.emit_metrics(records, tmp_path / "b")
        assert open(a_jsonl, "rb").read() == open(b_jsonl, "rb").read()
        assert open(a_csv, "rb").read() == open(b_csv, "rb").read()

    def test_io_failure_names_path(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("a file, not a directory\n")
        with pytest.raises(OSError, match="blocker"):
            harness.emit_metrics(sample_records(), blocker / "out")


class TestEvaluate:
    def test_perfect_model(self):
        ds = data.gen_synthetic("gaussian_blobs", 2, 50, 2, 0.05, seed=1)
        model = nn.MlpModel(
            (2, 2), (np.array([[1000.0, -1000.0], [0.0, 0.0]]),), (np.zeros(2),)
        )
        assert harness.evaluate(model, ds) == 1.0

    def test_constant_model_chance(self):
        ds = data.gen_synthetic("gaussian_blobs", 4, 25, 2, 0.1, seed=2)
        model = nn.MlpModel((2, 4), (np.zeros((2, 4)),), (np.array([0.0, 5.0, 0.0, 0.0]),))
        assert harness.evaluate(model, ds) == 0.25

    def test_matches_looped_check(self):
        ds = data.gen_synthetic("spirals", 3, 20, 2, 0.3, seed=3)
        model = random_model((2, 6, 3), seed=4)
        acc = harness.evaluate(model, ds)
        hits = sum(
            int(np.argmax(nn.forward(model, ds.features[i]).probs) == ds.clean_classes()[i])
            for i in range(ds.n)
        )
        assert acc == hits / ds.n


class TestSelectValidation:
    def setup_pool(self, seed=5):
        cfg = tiny_config()
        ds = data.inject_symmetric(
            data.gen_synthetic("gaussian_blobs", 3, 30, 2, 0.25, seed=seed), 0.3, seed + 1
        )
        model = random_model((2, 8, 3), seed=seed)
        clean_idx = np.sort(np.random.default_rng(seed).choice(ds.n, size=60, replace=False))
        robust = ds.observed_labels.astype(float)
        return cfg, ds, model, clean_idx, robust

    def test_most_confident_is_top_m(self):
        from dataclasses import replace

        cfg, ds, model, clean_idx, robust = self.setup_pool()
        cfg = replace(cfg, selection_strategy="most_confident")
        result = harness.select_validation(cfg, ds, model, clean_idx, robust, event_seed=1)
        conf = np.max(nn.forward(model, ds.features[clean_idx]).probs, axis=1)
        classes = ds.observed_classes()[clean_idx]
        expect = []
        for c in range(3):
            rows = np.flatnonzero(classes == c)
            order = rows[np.lexsort((clean_idx[rows], -conf[rows]))]
            expect.extend(clean_idx[order[: cfg.val_per_class]].tolist())
        assert np.array_equal(result.validation_set, np.sort(expect))

    def test_random_full_quota_takes_pool(self):
        from dataclasses import replace

        cfg, ds, model, clean_idx, robust = self.setup_pool(seed=6)
        cfg = replace(cfg, selection_strategy="random", val_per_class=len(clean_idx),
                      shortlist_per_class=len(clean_idx) + 1)
        result = harness.select_validation(cfg, ds, model, clean_idx, robust, event_seed=2)
        assert np.array_equal(result.validation_set, clean_idx)

    def test_each_strategy_bipartitions(self):
        from dataclasses import replace

        cfg, ds, model, clean_idx, robust = self.setup_pool(seed=7)
        for strategy in harness.STRATEGIES:
            result = harness.select_validation(
                replace(cfg, selection_strategy=strategy), ds, model, clean_idx, robust, 3
            )
            assert np.intersect1d(result.validation_set, result.training_set).size == 0
            union = np.union1d(result.validation_set, result.training_set)
            assert np.array_equal(union, np.arange(ds.n))
            assert np.all(np.isin(result.validation_set, clean_idx))


class TestRunExperiment:
    def test_no_iterations_single_record(self):
        result = harness.run_experiment(tiny_config(iterations=0))
        assert len(result.records) == 1
        assert result.records[0].iter == 0

    def test_records_well_formed(self):
        result = harness.run_experiment(tiny_config())
        iters = [r.iter for r in result.records]
        assert iters == sorted(iters)
        assert iters[-1] == 12
        for rec in result.records:
            for key in harness.MetricsRecord.KEYS:
                assert math.isfinite(getattr(rec, key))
            for key in ("test_acc", "val_clean", "dc_precision", "dc_recall"):
                assert 0.0 <= getattr(rec, key) <= 1.0

    def test_byte_identical_metrics(self, tmp_path):
        cfg = tiny_config(seed=9)
        paths = []
        for name in ("a", "b"):
            result = harness.run_experiment(cfg)
            paths.append(harness.emit_metrics(result.records, tmp_path / name))
        assert open(paths[0][0], "rb").read() == open(paths[1][0], "rb").read()
        assert open(paths[0][1], "rb").read() == open(paths[1][1], "rb").read()

    def test_hidden_labels_never_steer_training(self):
        # scrambling the hidden clean labels must leave the trained model
        # and every non-diagnostic metric untouched
        cfg = tiny_config(seed=11)
        seeds = harness._derive_seeds(cfg.seed)
        train_ds, test_ds = harness.build_datasets(cfg, seeds)
        scrambled = data.Dataset(
            train_ds.features,
            np.roll(train_ds.clean_labels, 1, axis=1),
            train_ds.observed_labels,
            train_ds.n_classes,
            train_ds.openset_mask,
        )
        a = harness.run_experiment(cfg, train_ds=train_ds, test_ds=test_ds)
        b = harness.run_experiment(cfg, train_ds=scrambled, test_ds=test_ds)
        assert all(np.array_equal(x, y) for x, y in zip(a.model.weights, b.model.weights))
        assert all(np.array_equal(x, y) for x, y in zip(a.model.biases, b.model.biases))
        for ra, rb in zip(a.records, b.records):
            for key in ("iter", "test_acc", "lr", "info_obj", "clean_obj"):
                assert getattr(ra, key) == getattr(rb, key)

    def test_baseline_guard(self):
        with pytest.raises(ConfigError):
            harness.run_baseline(tiny_config(selection_strategy="max_utility"))

    def test_baseline_strategies_run(self):
        result = harness.run_baseline(tiny_config(selection_strategy="random", iterations=6))
        assert len(result.records) >= 1


class TestCli:
    def test_run_writes_metrics(self, tmp_path, capsys):
        cfg_path = write_tiny_config(tmp_path / "run.cfg")
        out = tmp_path / "runs"
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
        captured = capsys.readouterr()
        assert "seed 3 strategy max_utility" in captured.out
        assert (out / "metrics.jsonl").exists()
        assert (out / "metrics.csv").exists()

    def test_run_strategy_override(self, tmp_path, capsys):
        cfg_path = write_tiny_config(tmp_path / "run.cfg", iterations=6)
        out = tmp_path / "runs"
        code = cli.main([
            "run", "--config", str(cfg_path), "--out", str(out),
            "--strategy", "random", "--seed", "5",
        ])
        assert code == 0
        assert "seed 5 strategy random" in capsys.readouterr().out

    def test_bad_config_exits_2(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text("not_a_key = 1\n")
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_config_exits_3(self, tmp_path, capsys):
        missing = tmp_path / "nope.cfg"
        assert cli.main(["run", "--config", str(missing), "--out", str(tmp_path)]) == 3
        assert "error:" in capsys.readouterr().err

    def test_sweep_runs_each_seed(self, tmp_path, capsys):
        cfg_path = write_tiny_config(tmp_path / "run.cfg", iterations=6)
        out = tmp_path / "sweep"
        code = cli.main([
            "sweep", "--config", str(cfg_path), "--seeds", "1..2", "--out", str(out),
        ])
        assert code == 0
        assert (out / "seed_1" / "metrics.jsonl").exists()
        assert (out / "seed_2" / "metrics.jsonl").exists()
        assert "mean final test_acc over 2 seeds" in capsys.readouterr().out

    def test_bad_seed_range_exits_2(self, tmp_path, capsys):
        cfg_path = write_tiny_config(tmp_path / "run.cfg")
        code = cli.main([
            "sweep", "--config", str(cfg_path), "--seeds", "3", "--out", str(tmp_path),
        ])
        assert code == 2
        assert "a..b" in capsys.readouterr().err

    def test_bench_reports_backend(self, capsys):
        assert cli.main(["bench", "--sizes", "30", "--repeats", "1"]) == 0
        out = capsys.readouterr().out
        assert "active backend:" in out
        assert "coverage" in out or "gain" in out
