import numpy as np
import pytest

from bflab import data
from bflab.model import Architecture, ModelParams, TrainConfig, train


def linear_model(w, b, train_seed=0):
    """Single affine layer from explicit weights; w is (d, k)."""
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float)
    arch = Architecture(input_dim=w.shape[0], hidden_dims=(), num_classes=w.shape[1])
    return ModelParams(arch, (w,), (b,), train_seed, {})


def random_linear_model(rng, d=2, k=2):
    return linear_model(rng.normal(size=(d, k)), rng.normal(size=k))


@pytest.fixture(scope="session")
def moons():
    return data.gen_moons(n_per_class=500, noise=0.06, seed=11)


@pytest.fixture(scope="session")
def moons_mlp(moons):
    arch = Architecture(input_dim=2, hidden_dims=(32, 32), num_classes=2)
    hyper = TrainConfig(epochs=150, batch_size=32, learning_rate=0.2, dataset_name=moons.name)
    return train(arch, moons.train_points(), hyper, seed=21)


@pytest.fixture(scope="session")
def blobs():
    return data.gen_blobs(k=4, d=16, n_per_class=120, spread=0.07, seed=5)


@pytest.fixture(scope="session")
def blobs_mlp(blobs):
    arch = Architecture(input_dim=16, hidden_dims=(32, 32), num_classes=4)
    hyper = TrainConfig(epochs=80, batch_size=32, learning_rate=0.15, dataset_name=blobs.name)
    return train(arch, blobs.train_points(), hyper, seed=31)


@pytest.fixture(scope="session")
def blobs_victim(blobs):
    arch = Architecture(input_dim=16, hidden_dims=(48,), num_classes=4)
    hyper = TrainConfig(epochs=80, batch_size=32, learning_rate=0.15, dataset_name=blobs.name)
    return train(arch, blobs.train_points(), hyper, seed=32)
