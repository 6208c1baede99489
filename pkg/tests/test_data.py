"""Dataset generation, corruption, and the mixup/augment operators."""

import numpy as np
import pytest

from metaval import data
from metaval.errors import CsvFormatError, SizingError

from conftest import small_blobs


def assert_one_hot(labels):
    assert np.all((labels == 0.0) | (labels == 1.0))
    assert np.all(labels.sum(axis=1) == 1.0)


class TestGenSynthetic:
    def test_tight_blobs_are_1nn_separable(self):
        ds = data.gen_synthetic("gaussian_blobs", 2, 100, 2, 1e-6, seed=1)
        d2 = np.sum((ds.features[:, None, :] - ds.features[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        nearest = np.argmin(d2, axis=1)
        assert np.all(ds.clean_classes()[nearest] == ds.clean_classes())

    def test_same_seed_bit_identical(self):
        a = data.gen_synthetic("spirals", 3, 40, 2, 0.2, seed=9)
        b = data.gen_synthetic("spirals", 3, 40, 2, 0.2, seed=9)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.observed_labels, b.observed_labels)

    def test_blob_means_on_unit_circle(self):
        ds = data.gen_synthetic("gaussian_blobs", 4, 250, 2, 0.1, seed=2)
        angles = 2.0 * np.pi * np.arange(4) / 4
        centers = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        for c in range(4):
            mean = ds.features[ds.clean_classes() == c].mean(axis=0)
            assert np.all(np.abs(mean - centers[c]) < 0.05)

    def test_clean_equals_observed_initially(self):
        ds = small_blobs()
        assert np.all(ds.correctly_labeled())
        assert not ds.openset_mask.any()

    def test_bad_args_rejected(self):
        with pytest.raises(ValueError):
            data.gen_synthetic("gaussian_blobs", 1, 10, 2, 0.1, seed=0)
        with pytest.raises(ValueError):
            data.gen_synthetic("mystery", 2, 10, 2, 0.1, seed=0)


class TestCsv:
    def test_hand_written_round_trip(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text(
            "f0,f1,label\n"
            "0.5,-1.25,0\n"
            "2.0,3.5,1\n"
            "-0.75,0.0,1\n"
        )
        ds = data.load_csv(path)
        assert np.array_equal(ds.features, [[0.5, -1.25], [2.0, 3.5], [-0.75, 0.0]])
        assert np.array_equal(ds.observed_classes(), [0, 1, 1])

    def test_label_out_of_range_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,f1,label\n0.0,0.0,0\n1.0,1.0,2\n")
        with pytest.raises(CsvFormatError, match="line 3"):
            data.load_csv(path, n_classes=2)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,f1,label\n0.0,0.0,0\n1.0,oops,1\n")
        with pytest.raises(CsvFormatError, match="line 3"):
            data.load_csv(path)

    def test_write_read_identity(self, tmp_path):
        ds = data.inject_symmetric(small_blobs(seed=4), 0.3, seed=5)
        path = tmp_path / "round.csv"
        data.save_csv(ds, path)
        back = data.load_csv(path)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.observed_labels, ds.observed_labels)
        assert np.array_equal(back.clean_labels, ds.clean_labels)


class TestSymmetricNoise:
    def test_rate_zero_identity(self):
        ds = small_blobs()
        out = data.inject_symmetric(ds, 0.0, seed=3)
        assert np.array_equal(out.observed_labels, ds.observed_labels)

    def test_flip_fraction_band(self):
        ds = data.gen_synthetic("gaussian_blobs", 4, 2500, 2, 0.2, seed=6)
        out = data.inject_symmetric(ds, 0.4, seed=7)
        flipped = 1.0 - np.mean(out.correctly_labeled())
        assert 0.38 <= flipped <= 0.42

    def test_two_class_flips_land_on_other(self):
        ds = data.gen_synthetic("gaussian_blobs", 2, 200, 2, 0.2, seed=8)
        out = data.inject_symmetric(ds, 0.4, seed=9)
        moved = ~out.correctly_labeled()
        assert moved.any()
        assert np.all(out.observed_classes()[moved] == 1 - ds.observed_classes()[moved])

    def test_preserves_clean_and_features(self):
        ds = small_blobs()
        out = data.inject_symmetric(ds, 0.5, seed=10)
        assert np.array_equal(out.clean_labels, ds.clean_labels)
        assert np.array_equal(out.features, ds.features)
        assert_one_hot(out.observed_labels)


class TestAsymmetricNoise:
    def test_rate_zero_identity(self):
        ds = small_blobs()
        out = data.inject_asymmetric(ds, 0.0, seed=1)
        assert np.array_equal(out.observed_labels, ds.observed_labels)

    def test_identity_map_identity(self):
        ds = small_blobs()
        out = data.inject_asymmetric(ds, 0.8, seed=1, pair_map=np.arange(3))
        assert np.array_equal(out.observed_labels, ds.observed_labels)

    def test_cyclic_confusion_concentrates(self):
        ds = data.gen_synthetic("gaussian_blobs", 4, 2000, 2, 0.2, seed=12)
        out = data.inject_asymmetric(ds, 0.4, seed=13)
        clean, obs = ds.observed_classes(), out.observed_classes()
        for c in range(4):
            rows = clean == c
            frac = np.mean(obs[rows] == (c + 1) % 4)
            assert 0.37 <= frac <= 0.43
            # off-diagonal mass goes only to the mapped class
            assert np.all(np.isin(obs[rows], [c, (c + 1) % 4]))


class TestOpensetNoise:
    def test_rate_zero_identity(self):
        ds = small_blobs()
        out = data.inject_openset(ds, 0.0, seed=1)
        assert not out.openset_mask.any()
        assert np.array_equal(out.features, ds.features)

    def test_mask_count_band(self):
        ds = data.gen_synthetic("gaussian_blobs", 4, 250, 2, 0.2, seed=14)
        out = data.inject_openset(ds, 0.3, seed=15)
        assert 270 <= int(out.openset_mask.sum()) <= 330

    def test_masked_never_correct(self):
        ds = small_blobs()
        out = data.inject_openset(ds, 0.4, seed=16)
        assert not out.correctly_labeled()[out.openset_mask].any()
        assert np.all(out.clean_classes()[out.openset_mask] == ds.n_classes)
        assert_one_hot(out.observed_labels)


class TestLongtail:
    def sizes_of(self, ds):
        return np.bincount(ds.observed_classes(), minlength=ds.n_classes)

    def test_ratio_one_keeps_everything(self):
        ds = small_blobs(n_per_class=30)
        out = data.apply_longtail(ds, data.ImbalanceSpec(1.0), seed=1)
        assert np.array_equal(self.sizes_of(out), [30, 30, 30])

    def test_two_class_closed_form(self):
        ds = data.gen_synthetic("gaussian_blobs", 2, 500, 2, 0.2, seed=17)
        out = data.apply_longtail(ds, data.ImbalanceSpec(10.0), seed=18)
        assert np.array_equal(self.sizes_of(out), [500, 50])

    def test_four_class_profile(self):
        assert np.array_equal(data.longtail_sizes(1000, 50.0, 4), [1000, 271, 74, 20])

    def test_insufficient_class_names_it(self):
        # class 0 smaller than class 1, so its head-of-profile target misses
        ds = small_blobs(n_classes=2, n_per_class=10).subset(np.arange(5, 20))
        with pytest.raises(SizingError, match="class 0"):
            data.apply_longtail(ds, data.ImbalanceSpec(2.0), seed=1)

    def test_sizes_ignore_row_order(self):
        ds = data.gen_synthetic("gaussian_blobs", 3, 60, 2, 0.2, seed=19)
        perm = np.random.default_rng(20).permutation(ds.n)
        shuffled = ds.subset(perm)
        a = data.apply_longtail(ds, data.ImbalanceSpec(4.0), seed=21)
        b = data.apply_longtail(shuffled, data.ImbalanceSpec(4.0), seed=21)
        assert np.array_equal(self.sizes_of(a), self.sizes_of(b))

    def test_compose_noop_is_identity(self):
        ds = small_blobs()
        out = data.inject_symmetric(
            data.apply_longtail(ds, data.ImbalanceSpec(1.0), seed=2), 0.0, seed=3
        )
        assert np.array_equal(out.features, ds.features)
        assert np.array_equal(out.observed_labels, ds.observed_labels)
        assert np.array_equal(out.clean_labels, ds.clean_labels)


class TestSpecs:
    def test_noise_rate_bounds(self):
        with pytest.raises(ValueError):
            data.NoiseSpec(kind="symmetric", rate=1.0)
        with pytest.raises(ValueError):
            data.NoiseSpec(kind="warp", rate=0.1)

    def test_imbalance_ratio_bounds(self):
        with pytest.raises(ValueError):
            data.ImbalanceSpec(0.5)


class TestAugment:
    def test_vanishing_strength(self):
        x = np.array([1.0, -2.0, 3.0])
        assert np.allclose(data.augment(x, 1e-12, seed=1), x, atol=1e-10)

    def test_same_seed_identical(self):
        x = np.linspace(0.0, 1.0, 5)
        assert np.array_equal(data.augment(x, 0.3, seed=4), data.augment(x, 0.3, seed=4))

    def test_noise_moments(self):
        x = np.zeros(2)
        rng = np.random.default_rng(5)
        draws = np.stack([data.augment_with(x, 0.2, rng) for _ in range(10_000)])
        assert np.all(np.abs(draws.mean(axis=0)) < 3.0 * 0.2 / np.sqrt(10_000))

    def test_zero_strength_rejected(self):
        with pytest.raises(ValueError):
            data.augment(np.zeros(2), 0.0, seed=1)


class TestMixup:
    def onehot_pairs(self):
        xi, yi = np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0])
        xj, yj = np.array([0.0, 1.0]), np.array([0.0, 0.0, 1.0])
        return (xi, yi), (xj, yj)

    def test_beta_one_returns_train_pair(self):
        train, val = self.onehot_pairs()
        x, y = data.mixup(train, val, alpha=1.0, beta=1.0)
        assert np.array_equal(x, train[0])
        assert np.array_equal(y, train[1])

    def test_beta_half_two_entries(self):
        train, val = self.onehot_pairs()
        _, y = data.mixup(train, val, alpha=1.0, beta=0.5)
        assert np.sum(y == 0.5) == 2
        assert y.sum() == pytest.approx(1.0, abs=1e-12)

    def test_beta_draws_uniform_mean(self):
        train, val = self.onehot_pairs()
        rng = np.random.default_rng(6)
        betas = [data.mixup(train, val, alpha=1.0, rng=rng)[1][0] for _ in range(10_000)]
        assert abs(np.mean(betas) - 0.5) < 0.015

    def test_label_stays_on_simplex(self, rng):
        train, val = self.onehot_pairs()
        for _ in range(50):
            _, y = data.mixup(train, val, alpha=0.4, rng=rng)
            assert np.all(y >= 0.0)
            assert y.sum() == pytest.approx(1.0, abs=1e-12)
