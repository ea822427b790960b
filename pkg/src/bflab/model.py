"""Small dense multi-class classifiers with exact input gradients.

Everything is double precision and computed with explicit numpy arithmetic:
forward pass, softmax cross-entropy, and reverse-mode gradients with respect
to the *input* (the quantity every attack and boundary probe consumes).
Models are immutable after training and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from bflab.errors import ConfigError, InputError, ModelFileError
from bflab.util import rng_from

MODEL_FORMAT_VERSION = 1

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class Architecture:
    """Layer sizes of a dense classifier.

    An empty `hidden_dims` gives a single affine layer (logits = xW + b).
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, input through logits."""
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class ModelParams:
    """Trained weights plus provenance. Arrays are frozen read-only."""

    arch: Architecture
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    train_seed: int
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.arch.layer_dims
        if len(self.weights) != len(expected) or len(self.biases) != len(expected):
            raise InputError(
                f"expected {len(expected)} layers, got {len(self.weights)} weight "
                f"and {len(self.biases)} bias arrays"
            )
        frozen_w, frozen_b = [], []
        for i, (fan_in, fan_out) in enumerate(expected):
            w = np.ascontiguousarray(self.weights[i], dtype=np.float64)
            b = np.ascontiguousarray(self.biases[i], dtype=np.float64)
            if w.shape != (fan_in, fan_out):
                raise InputError(
                    f"layer {i}: weight shape {w.shape} does not chain, expected {(fan_in, fan_out)}"
                )
            if b.shape != (fan_out,):
                raise InputError(f"layer {i}: bias shape {b.shape}, expected {(fan_out,)}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise InputError(f"layer {i}: non-finite parameter values")
            w.flags.writeable = False
            b.flags.writeable = False
            frozen_w.append(w)
            frozen_b.append(b)
        object.__setattr__(self, "weights", tuple(frozen_w))
        object.__setattr__(self, "biases", tuple(frozen_b))

    @property
    def input_dim(self) -> int:
        return self.arch.input_dim

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes


@dataclass(frozen=True)
class LabeledPoint:
    """A point in [0,1]^d with its ground-truth class index."""

    x: np.ndarray
    y: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise InputError(f"point must be a 1-d vector, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise InputError("point has non-finite coordinates")
        if x.min() < 0.0 or x.max() > 1.0:
            raise InputError("point coordinates must lie in [0,1]")
        if self.y < 0:
            raise InputError(f"label must be a non-negative class index, got {self.y}")
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))


def _as_batch(model: ModelParams, x: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != model.input_dim:
        raise InputError(
            f"input has shape {np.shape(x)}, model expects vectors of length {model.input_dim}"
        )
    if not np.isfinite(arr).all():
        raise InputError("input has non-finite entries")
    return arr, single


def _forward_cached(model: ModelParams, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits plus per-hidden-layer post-activations (needed for backward)."""
    acts: list[np.ndarray] = []
    a = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        if i == last:
            return z, acts
        a = np.maximum(z, 0.0) if model.arch.activation == "relu" else np.tanh(z)
        acts.append(a)
    raise AssertionError("unreachable")


def forward_batch(model: ModelParams, X: np.ndarray) -> np.ndarray:
    """Logits for a stack of inputs, shape (n, num_classes)."""
    X, _ = _as_batch(model, X)
    logits, _ = _forward_cached(model, X)
    return logits


def forward(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Logits for one input vector."""
    X, single = _as_batch(model, x)
    logits, _ = _forward_cached(model, X)
    return logits[0] if single else logits


def predict_batch(model: ModelParams, X: np.ndarray) -> np.ndarray:
    # argmax breaks ties toward the lowest index, which is the contract
    return np.argmax(forward_batch(model, X), axis=1)


def predict(model: ModelParams, x: np.ndarray) -> int:
    return int(np.argmax(forward(model, x)))


def _check_labels(model: ModelParams, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.min(initial=0) < 0 or y.max(initial=0) >= model.num_classes:
        raise InputError(f"labels must lie in [0, {model.num_classes}), got {y}")
    return y


def _softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def loss_batch(model: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-example softmax cross-entropy, log-sum-exp stabilized."""
    X, _ = _as_batch(model, X)
    y = _check_labels(model, np.atleast_1d(y))
    if len(y) == 1 and X.shape[0] > 1:
        y = np.repeat(y, X.shape[0])
    if len(y) != X.shape[0]:
        raise InputError(f"{X.shape[0]} inputs but {len(y)} labels")
    logits, _ = _forward_cached(model, X)
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return lse - logits[np.arange(len(y)), y]


def loss(model: ModelParams, x: np.ndarray, y: int) -> float:
    return float(loss_batch(model, x, np.asarray([y]))[0])


def input_gradient_batch(model: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d loss / d input per row, by reverse-mode accumulation through all layers."""
    X, _ = _as_batch(model, X)
    y = _check_labels(model, np.atleast_1d(y))
    if len(y) == 1 and X.shape[0] > 1:
        y = np.repeat(y, X.shape[0])
    if len(y) != X.shape[0]:
        raise InputError(f"{X.shape[0]} inputs but {len(y)} labels")
    logits, acts = _forward_cached(model, X)
    delta = _softmax(logits)
    delta[np.arange(len(y)), y] -= 1.0
    for i in range(len(model.weights) - 1, 0, -1):
        delta = delta @ model.weights[i].T
        a = acts[i - 1]
        if model.arch.activation == "relu":
            delta = delta * (a > 0.0)
        else:
            delta = delta * (1.0 - a * a)
    return delta @ model.weights[0].T


def input_gradient(model: ModelParams, x: np.ndarray, y: int) -> np.ndarray:
    X, single = _as_batch(model, x)
    g = input_gradient_batch(model, X, np.asarray([y]))
    return g[0] if single else g


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    noise_augment_sigma: float = 0.0
    dataset_name: str = ""

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.momentum < 0 or self.noise_augment_sigma < 0:
            raise ConfigError("momentum and noise_augment_sigma must be >= 0")


def train(
    arch: Architecture,
    data: Sequence[LabeledPoint],
    hyper: TrainConfig,
    seed: int,
) -> ModelParams:
    """SGD-with-momentum training of a fresh model; bitwise deterministic per seed.

    A positive `noise_augment_sigma` perturbs every batch with fresh Gaussian
    noise, which is this lab's stand-in for robustly trained victims.
    """
    if len(data) == 0:
        raise ConfigError("training data is empty")
    X = np.stack([p.x for p in data])
    y = np.asarray([p.y for p in data], dtype=np.int64)
    if X.shape[1] != arch.input_dim:
        raise ConfigError(f"data dim {X.shape[1]} != arch input_dim {arch.input_dim}")
    if y.max() >= arch.num_classes:
        raise ConfigError(f"label {y.max()} out of range for {arch.num_classes} classes")
    if len(np.unique(y)) < 2:
        raise ConfigError("training data covers a single class")

    rng = rng_from(seed, 0)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_dims:
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]

    n = len(X)
    act = arch.activation
    last = len(weights) - 1
    shuffle_rng = rng_from(seed, 1)
    noise_rng = rng_from(seed, 2)

    for _ in range(hyper.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            xb = X[idx]
            if hyper.noise_augment_sigma > 0:
                xb = xb + noise_rng.normal(0.0, hyper.noise_augment_sigma, size=xb.shape)
            yb = y[idx]

            # forward with caches
            a = xb
            pre_acts = []
            post_acts = [a]
            for i in range(len(weights)):
                z = a @ weights[i] + biases[i]
                pre_acts.append(z)
                if i < last:
                    a = np.maximum(z, 0.0) if act == "relu" else np.tanh(z)
                    post_acts.append(a)

            # backward, mean loss over the batch
            p = _softmax(pre_acts[last])
            delta = p
            delta[np.arange(len(yb)), yb] -= 1.0
            delta /= len(yb)
            for i in range(last, -1, -1):
                gw = post_acts[i].T @ delta
                gb = delta.sum(axis=0)
                if i > 0:
                    delta = delta @ weights[i].T
                    if act == "relu":
                        delta = delta * (pre_acts[i - 1] > 0.0)
                    else:
                        delta = delta * (1.0 - post_acts[i] ** 2)
                vel_w[i] = hyper.momentum * vel_w[i] - hyper.learning_rate * gw
                vel_b[i] = hyper.momentum * vel_b[i] - hyper.learning_rate * gb
                weights[i] = weights[i] + vel_w[i]
                biases[i] = biases[i] + vel_b[i]

    fitted = ModelParams(
        arch=arch,
        weights=tuple(weights),
        biases=tuple(biases),
        train_seed=int(seed),
        train_meta={},
    )
    acc = float(np.mean(predict_batch(fitted, X) == y))
    meta = {
        "dataset": hyper.dataset_name,
        "epochs": hyper.epochs,
        "final_train_accuracy": acc,
    }
    return ModelParams(
        arch=arch,
        weights=fitted.weights,
        biases=fitted.biases,
        train_seed=int(seed),
        train_meta=meta,
    )


def accuracy(model: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict_batch(model, X) == np.asarray(y)))


# ---------------------------------------------------------------------------
# Persistence: one JSON document, weights as hex-float strings so the
# round trip is bit-exact.
# ---------------------------------------------------------------------------

def _hex_matrix(a: np.ndarray) -> list:
    if a.ndim == 1:
        return [float(v).hex() for v in a]
    return [[float(v).hex() for v in row] for row in a]


def _unhex_matrix(rows, what: str) -> np.ndarray:
    try:
        if rows and isinstance(rows[0], list):
            return np.array([[float.fromhex(v) for v in row] for row in rows])
        return np.array([float.fromhex(v) for v in rows])
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"bad hex-float value in {what}: {exc}") from exc


def save_model(model: ModelParams, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "arch": {
            "input_dim": model.arch.input_dim,
            "hidden_dims": list(model.arch.hidden_dims),
            "num_classes": model.arch.num_classes,
            "activation": model.arch.activation,
        },
        "train_seed": model.train_seed,
        "train_meta": model.train_meta,
        "layers": [
            {"w": _hex_matrix(w), "b": _hex_matrix(b)}
            for w, b in zip(model.weights, model.biases)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"malformed model file {path}: {exc.msg} at byte offset {exc.pos}") from exc
    for key in ("format_version", "arch", "train_seed", "train_meta", "layers"):
        if key not in doc:
            raise ModelFileError(f"model file {path} is missing field {key!r}")
    if doc["format_version"] != MODEL_FORMAT_VERSION:
        raise ModelFileError(f"unsupported format_version {doc['format_version']}")
    a = doc["arch"]
    try:
        arch = Architecture(
            input_dim=int(a["input_dim"]),
            hidden_dims=tuple(int(h) for h in a["hidden_dims"]),
            num_classes=int(a["num_classes"]),
            activation=str(a["activation"]),
        )
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise ModelFileError(f"bad arch section in {path}: {exc}") from exc

    expected = arch.layer_dims
    if len(doc["layers"]) != len(expected):
        raise ModelFileError(
            f"model file has {len(doc['layers'])} layers, arch requires {len(expected)}"
        )
    weights, biases = [], []
    for i, layer in enumerate(doc["layers"]):
        w = _unhex_matrix(layer["w"], f"layer {i} weights")
        b = _unhex_matrix(layer["b"], f"layer {i} biases")
        if w.shape != expected[i]:
            raise ModelFileError(
                f"layer {i}: stored weight shape {w.shape} does not match header shape {expected[i]}"
            )
        if b.shape != (expected[i][1],):
            raise ModelFileError(
                f"layer {i}: stored bias shape {b.shape} does not match header shape {(expected[i][1],)}"
            )
        weights.append(w)
        biases.append(b)
    return ModelParams(
        arch=arch,
        weights=tuple(weights),
        biases=tuple(biases),
        train_seed=int(doc["train_seed"]),
        train_meta=dict(doc["train_meta"]),
    )
