import json
import math
from concurrent.futures import ThreadPoolExecutor

import mpmath
import numpy as np
import pytest

from bflab.errors import ConfigError, InputError, ModelFileError
from bflab.model import (
    Architecture,
    LabeledPoint,
    ModelParams,
    TrainConfig,
    accuracy,
    forward,
    forward_batch,
    input_gradient,
    load_model,
    loss,
    predict,
    save_model,
    train,
)
from conftest import linear_model, random_linear_model


def random_mlp(rng, d, hidden, k, activation):
    arch = Architecture(d, tuple(hidden), k, activation)
    weights = [rng.normal(scale=0.8, size=shape) for shape in arch.layer_dims]
    biases = [rng.normal(scale=0.3, size=shape[1]) for shape in arch.layer_dims]
    return ModelParams(arch, tuple(weights), tuple(biases), 0, {})


def fd_gradient(model, x, y, h=1e-5):
    """Central finite differences, the independent gradient oracle."""
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (loss(model, xp, y) - loss(model, xm, y)) / (2 * h)
    return g


def mp_loss(model, x, y):
    """Cross entropy via 50-digit arithmetic; summation order irrelevant."""
    with mpmath.workdps(50):
        logits = [mpmath.mpf(float(v)) for v in forward(model, x)]
        denom = mpmath.fsum(mpmath.e**z for z in logits)
        return float(-mpmath.log(mpmath.e ** logits[y] / denom))


# ----- forward / predict -----

def test_forward_identity_weights():
    m = linear_model(np.eye(2), [0.0, 0.0])
    np.testing.assert_array_equal(forward(m, np.array([0.3, 0.7])), [0.3, 0.7])


def test_forward_deterministic(moons_mlp):
    x = np.array([0.4, 0.6])
    a = forward(moons_mlp, x)
    b = forward(moons_mlp, x)
    assert a.tobytes() == b.tobytes()


def test_forward_rejects_bad_dim():
    m = linear_model(np.eye(2), [0, 0])
    with pytest.raises(InputError):
        forward(m, np.array([1.0, 2.0, 3.0]))
    with pytest.raises(InputError):
        forward(m, np.array([np.nan, 0.0]))


def test_predict_argmax_and_tie_break():
    m = linear_model(np.eye(2), [0, 0])
    assert predict(m, np.array([0.3, 0.7])) == 1
    assert predict(m, np.array([0.5, 0.5])) == 0  # tie -> lowest index
    m3 = linear_model(np.eye(3), [0, 0, 0])
    assert predict(m3, np.array([0.1, 0.2, 0.9])) == 2


def test_moons_mlp_test_accuracy(moons, moons_mlp):
    X = moons.X[moons.test_idx]
    y = moons.y[moons.test_idx]
    assert len(y) == 500
    assert accuracy(moons_mlp, X, y) >= 0.97


# ----- loss -----

def test_loss_uniform_logits_is_ln_k():
    for k in (2, 3, 7):
        m = linear_model(np.zeros((2, k)), np.ones(k) * 0.37)
        assert abs(loss(m, np.array([0.5, 0.5]), 0) - math.log(k)) < 1e-12


def test_loss_extreme_logits_no_overflow():
    m = linear_model(np.array([[1000.0, 0.0], [0.0, 0.0]]), [0.0, 0.0])
    v = loss(m, np.array([1.0, 0.0]), 0)
    assert np.isfinite(v) and v < 1e-12


def test_loss_matches_high_precision_oracle():
    rng = np.random.default_rng(7)
    for _ in range(25):
        m = random_mlp(rng, 3, [5], 4, "tanh")
        x = rng.uniform(0, 1, 3)
        y = int(rng.integers(0, 4))
        assert abs(loss(m, x, y) - mp_loss(m, x, y)) < 1e-12


def test_loss_rejects_bad_label():
    m = linear_model(np.eye(2), [0, 0])
    with pytest.raises(InputError):
        loss(m, np.array([0.5, 0.5]), 2)
    with pytest.raises(InputError):
        loss(m, np.array([0.5, 0.5]), -1)


# ----- input gradient -----

def test_gradient_linear_model_symbolic():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = random_linear_model(rng, d=3, k=2)
        x = rng.uniform(0, 1, 3)
        y = int(rng.integers(0, 2))
        z = forward(m, x)
        p = np.exp(z - z.max())
        p /= p.sum()
        p[y] -= 1.0
        expected = m.weights[0] @ p
        np.testing.assert_allclose(input_gradient(m, x, y), expected, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("hidden,act", [((), "relu"), ((8,), "relu"), ((8, 6), "tanh"), ((10,), "tanh")])
def test_gradient_matches_finite_differences(hidden, act):
    rng = np.random.default_rng(hash((hidden, act)) % 2**32)
    for _ in range(10):
        m = random_mlp(rng, 4, hidden, 3, act)
        x = rng.uniform(0, 1, 4)
        y = int(rng.integers(0, 3))
        g = input_gradient(m, x, y)
        g_fd = fd_gradient(m, x, y)
        scale = max(np.abs(g_fd).max(), np.abs(g).max(), 1e-12)
        assert np.abs(g - g_fd).max() / scale < 1e-6


def test_gradient_zero_at_strict_local_minimum():
    # logit0 = -(relu(x) + relu(-x)) = -|x|, logit1 = 0: the loss for y=0 is
    # log(1 + e^{|x|}), strictly minimized at x = 0 where the relu masks kill
    # the gradient exactly
    arch = Architecture(1, (2,), 2)
    w1 = np.array([[1.0, -1.0]])
    w2 = np.array([[-1.0, 0.0], [-1.0, 0.0]])
    m = ModelParams(arch, (w1, w2), (np.zeros(2), np.zeros(2)), 0, {})
    g = input_gradient(m, np.array([0.0]), 0)
    assert np.abs(g).max() < 1e-8
    # and it is a real minimum: nearby points have larger loss
    assert loss(m, np.array([0.01]), 0) > loss(m, np.array([0.0]), 0)
    assert loss(m, np.array([-0.01]), 0) > loss(m, np.array([0.0]), 0)


def test_small_step_along_negative_gradient_never_increases_loss(moons_mlp):
    rng = np.random.default_rng(9)
    for _ in range(50):
        x = rng.uniform(0, 1, 2)
        y = int(rng.integers(0, 2))
        g = input_gradient(moons_mlp, x, y)
        assert loss(moons_mlp, x - 1e-6 * g, y) <= loss(moons_mlp, x, y) + 1e-9


# ----- training -----

def test_train_blobs_linear_reaches_095():
    from bflab.data import gen_blobs

    ds = gen_blobs(k=3, d=2, n_per_class=100, spread=0.05, seed=2)
    arch = Architecture(2, (), 3)
    m = train(arch, ds.train_points(), TrainConfig(epochs=200, learning_rate=0.2), seed=4)
    assert m.train_meta["final_train_accuracy"] >= 0.95


def test_train_bitwise_deterministic(blobs):
    arch = Architecture(16, (8,), 4)
    hyper = TrainConfig(epochs=5)
    a = train(arch, blobs.train_points(), hyper, seed=77)
    b = train(arch, blobs.train_points(), hyper, seed=77)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.weights, b.weights))
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.biases, b.biases))
    assert a.train_meta == b.train_meta


def test_train_rejects_single_class():
    pts = [LabeledPoint(np.array([0.1, 0.2]), 0), LabeledPoint(np.array([0.3, 0.4]), 0)]
    with pytest.raises(ConfigError):
        train(Architecture(2, (), 2), pts, TrainConfig(epochs=1), seed=0)


def test_noise_augmented_training_runs(blobs):
    arch = Architecture(16, (8,), 4)
    m = train(arch, blobs.train_points(), TrainConfig(epochs=5, noise_augment_sigma=0.05), seed=1)
    assert m.train_meta["final_train_accuracy"] > 0.5


# ----- persistence -----

def test_save_load_round_trip(tmp_path, moons_mlp):
    path = tmp_path / "m.json"
    save_model(moons_mlp, path)
    loaded = load_model(path)
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, (100, 2))
    np.testing.assert_array_equal(forward_batch(moons_mlp, X), forward_batch(loaded, X))
    assert loaded.train_seed == moons_mlp.train_seed
    assert loaded.train_meta == moons_mlp.train_meta


def test_load_truncated_file_reports_offset(tmp_path, moons_mlp):
    path = tmp_path / "m.json"
    save_model(moons_mlp, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(ModelFileError, match="byte offset"):
        load_model(path)


def test_load_shape_mismatch_names_layer(tmp_path, moons_mlp):
    path = tmp_path / "m.json"
    save_model(moons_mlp, path)
    doc = json.loads(path.read_text())
    doc["layers"][1]["w"] = doc["layers"][1]["w"][:-1]  # drop a row
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFileError, match="layer 1"):
        load_model(path)


def test_model_params_validate_shapes():
    arch = Architecture(2, (3,), 2)
    with pytest.raises(InputError, match="layer 0"):
        ModelParams(arch, (np.zeros((2, 4)), np.zeros((3, 2))), (np.zeros(3), np.zeros(2)), 0, {})
    with pytest.raises(InputError):
        ModelParams(arch, (np.full((2, 3), np.inf), np.zeros((3, 2))), (np.zeros(3), np.zeros(2)), 0, {})


# ----- concurrency -----

def test_concurrent_reads_match_serial(moons_mlp):
    rng = np.random.default_rng(5)
    xs = [rng.uniform(0, 1, 2) for _ in range(64)]
    serial = [forward(moons_mlp, x) for x in xs]
    with ThreadPoolExecutor(max_workers=8) as pool:
        threaded = list(pool.map(lambda x: forward(moons_mlp, x), xs))
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a, b)


def test_model_arrays_are_read_only(moons_mlp):
    with pytest.raises(ValueError):
        moons_mlp.weights[0][0, 0] = 1.0
