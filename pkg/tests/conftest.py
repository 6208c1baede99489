import numpy as np
import pytest

from metaval import data, nn


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def small_blobs(n_classes=3, n_per_class=20, dim=2, spread=0.15, seed=11):
    return data.gen_synthetic("gaussian_blobs", n_classes, n_per_class, dim, spread, seed)


def random_model(layer_dims, seed=0):
    return nn.init_mlp(layer_dims, np.random.default_rng(seed))


def random_simplex(rng, n, width):
    raw = rng.random((n, width)) + 1e-3
    return raw / raw.sum(axis=1, keepdims=True)
