"""Experiment configuration: one JSON document, schema-validated before any
computation, hashed canonically for provenance."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import jsonschema
import numpy as np

from bflab import data as data_mod
from bflab.attack import ATTACK_KINDS, AttackConfig
from bflab.boundary import BoundaryConfig
from bflab.errors import ConfigError
from bflab.model import Architecture, ModelParams, TrainConfig, train
from bflab.util import rng_from

_MODEL_SPEC = {
    "type": "object",
    "properties": {
        "id": {"type": "string"},
        "hidden_dims": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "activation": {"enum": ["relu", "tanh"]},
        "train_seed": {"type": "integer"},
        "noise_augment_sigma": {"type": "number", "minimum": 0},
        "subset": {"enum": ["all", "half0", "half1"]},
    },
    "required": ["hidden_dims", "train_seed"],
    "additionalProperties": False,
}

_BOUNDARY_SPEC = {
    "type": "object",
    "properties": {
        "sigma": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "t_max": {"type": "integer", "minimum": 1},
        "n_points": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "bflab experiment configuration",
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "out_dir": {"type": "string"},
        "dataset": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["blobs", "moons", "rings", "idx"]},
                "classes": {"type": "integer", "minimum": 2},
                "dim": {"type": "integer", "minimum": 1},
                "n_per_class": {"type": "integer", "minimum": 2},
                "spread": {"type": "number", "exclusiveMinimum": 0},
                "noise": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
                "images": {"type": "string"},
                "labels": {"type": "string"},
                "max_items": {"type": ["integer", "null"], "minimum": 1},
                "downscale": {"type": "integer", "minimum": 1},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "models": {
            "type": "object",
            "properties": {
                "train": {
                    "type": "object",
                    "properties": {
                        "epochs": {"type": "integer", "minimum": 1},
                        "batch_size": {"type": "integer", "minimum": 1},
                        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                        "momentum": {"type": "number", "minimum": 0},
                    },
                    "additionalProperties": False,
                },
                "substitute": _MODEL_SPEC,
                "victims": {"type": "array", "items": _MODEL_SPEC, "minItems": 1},
            },
            "required": ["substitute", "victims"],
            "additionalProperties": False,
        },
        "attacks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string"},
                    "kind": {"enum": list(ATTACK_KINDS)},
                    "epsilon": {"type": "number", "minimum": 0},
                    "iterations": {"type": "integer", "minimum": 1},
                    "step": {"type": ["number", "null"], "exclusiveMinimum": 0},
                    "mu": {"type": "number", "minimum": 0},
                    "seed": {"type": "integer"},
                    "source_mode": {"enum": ["prediction", "label"]},
                    "boundary": _BOUNDARY_SPEC,
                },
                "required": ["name", "kind", "epsilon"],
                "additionalProperties": False,
            },
        },
        "study": {
            "type": "object",
            "properties": {
                "n_inputs": {"type": "integer", "minimum": 1},
                "protocol": {"enum": ["at_input", "at_victim_boundary"]},
                "cap": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "natural_sigma": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "n_directions": {"type": "integer", "minimum": 1},
                "robust_eps": {"type": "number", "exclusiveMinimum": 0},
                "include_misclassified": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "ablation": {
            "type": "object",
            "properties": {
                "parameter": {"enum": ["gamma", "n_points"]},
                "grid": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "attack": {"type": "string"},
            },
            "required": ["parameter", "grid", "attack"],
            "additionalProperties": False,
        },
    },
    "required": ["name", "seed", "out_dir", "dataset", "models", "attacks"],
    "additionalProperties": False,
}

_STUDY_DEFAULTS = {
    "n_inputs": 100,
    "protocol": "at_victim_boundary",
    "cap": 4.0,
    "tol": 1e-4,
    "natural_sigma": None,
    "n_directions": 20,
    "robust_eps": 0.1,
    "include_misclassified": False,
}


def validate_config(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc.msg} at byte offset {exc.pos}") from exc
    validate_config(doc)
    return doc


def config_hash(doc: dict) -> str:
    """Hash of the canonical (sorted keys, minimal whitespace) JSON form, so
    formatting and key order never change provenance."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def apply_overrides(doc: dict, overrides: dict) -> dict:
    """Flag overrides: seed/out replace the top level; eps/iters/n-points/
    gamma/sigma apply to every attack config."""
    doc = json.loads(json.dumps(doc))  # deep copy
    if overrides.get("seed") is not None:
        doc["seed"] = overrides["seed"]
    if overrides.get("out") is not None:
        doc["out_dir"] = overrides["out"]
    for a in doc["attacks"]:
        if overrides.get("eps") is not None:
            a["epsilon"] = overrides["eps"]
        if overrides.get("iters") is not None:
            a["iterations"] = overrides["iters"]
        bnd = a.get("boundary")
        for key, flag in (("n_points", "n_points"), ("gamma", "gamma"), ("sigma", "sigma")):
            if overrides.get(flag) is not None:
                if bnd is None:
                    bnd = a["boundary"] = {}
                bnd[key] = overrides[flag]
    validate_config(doc)
    return doc


def build_dataset(doc: dict) -> data_mod.Dataset:
    d = doc["dataset"]
    kind = d["kind"]
    if kind == "blobs":
        return data_mod.gen_blobs(
            k=d.get("classes", 4),
            d=d.get("dim", 16),
            n_per_class=d.get("n_per_class", 150),
            spread=d.get("spread", 0.14),
            seed=d.get("seed", doc["seed"]),
        )
    if kind == "moons":
        return data_mod.gen_moons(
            n_per_class=d.get("n_per_class", 300),
            noise=d.get("noise", 0.1),
            seed=d.get("seed", doc["seed"]),
        )
    if kind == "rings":
        return data_mod.gen_rings(
            k=d.get("classes", 3),
            n_per_class=d.get("n_per_class", 200),
            noise=d.get("noise", 0.05),
            seed=d.get("seed", doc["seed"]),
        )
    if kind == "idx":
        for req in ("images", "labels"):
            if req not in d:
                raise ConfigError(f"dataset kind 'idx' requires the {req!r} path")
        return data_mod.load_idx(
            d["images"], d["labels"], max_items=d.get("max_items"), downscale=d.get("downscale", 1)
        )
    raise ConfigError(f"unknown dataset kind {kind!r}")


def default_sigma(doc: dict, ds: data_mod.Dataset) -> float:
    """Direction scale when the config leaves sigma null: half the mean
    coordinate std for synthetic data, the image-scale default for idx."""
    if doc["dataset"]["kind"] == "idx":
        return 20.0 / 255.0
    return 0.5 * ds.coord_std()


def _subset_points(ds: data_mod.Dataset, subset: str, split_seed: int):
    if subset == "all":
        return ds.train_points()
    tr = ds.train_idx
    perm = rng_from(split_seed, 7).permutation(len(tr))
    half = len(tr) // 2
    sel = tr[np.sort(perm[:half])] if subset == "half0" else tr[np.sort(perm[half:])]
    return ds.points(sel)


def train_model_from_spec(doc: dict, ds: data_mod.Dataset, spec: dict) -> ModelParams:
    arch = Architecture(
        input_dim=ds.dim,
        hidden_dims=tuple(spec["hidden_dims"]),
        num_classes=ds.num_classes,
        activation=spec.get("activation", "relu"),
    )
    tr = doc.get("models", {}).get("train", {})
    hyper = TrainConfig(
        epochs=tr.get("epochs", 120),
        batch_size=tr.get("batch_size", 32),
        learning_rate=tr.get("learning_rate", 0.1),
        momentum=tr.get("momentum", 0.9),
        noise_augment_sigma=spec.get("noise_augment_sigma", 0.0),
        dataset_name=ds.name,
    )
    pts = _subset_points(ds, spec.get("subset", "all"), doc["seed"])
    return train(arch, pts, hyper, seed=spec["train_seed"])


def attack_tuples(doc: dict, ds: data_mod.Dataset) -> list[tuple[str, str, AttackConfig]]:
    """(name, kind, AttackConfig) per configured attack, with sigma defaults
    resolved against the dataset scale."""
    out = []
    for a in doc["attacks"]:
        bnd = None
        if a.get("boundary") is not None or a["kind"] in ("bf", "bf-mi"):
            b = a.get("boundary") or {}
            sigma = b.get("sigma")
            bnd = BoundaryConfig(
                sigma=default_sigma(doc, ds) if sigma is None else sigma,
                gamma=b.get("gamma", 0.6),
                t_max=b.get("t_max", 5),
                n_points=b.get("n_points", 20),
            )
        cfg = AttackConfig(
            epsilon=a["epsilon"],
            iterations=a.get("iterations", 10),
            step=a.get("step"),
            mu=a.get("mu", 1.0),
            boundary=bnd,
            seed=a.get("seed", 0),
            source_mode=a.get("source_mode", "prediction"),
        )
        out.append((a["name"], a["kind"], cfg))
    return out


def study_params(doc: dict) -> dict:
    merged = dict(_STUDY_DEFAULTS)
    merged.update(doc.get("study", {}))
    return merged


@dataclass(frozen=True)
class StudyProvenance:
    config_hash: str
    seed: int
    tool_version: str
    wall_time: float

    def as_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "wall_time": self.wall_time,
        }
