"""Command-line operator surface.

Subcommands: train | attack | study | ablate | plot. Every command reads one
JSON config document (schema in bflab.config.SCHEMA, published in
docs/config-schema.json), applies flag overrides, and writes its outputs
under the configured output directory. Reruns with the same config and seed
produce byte-identical files except for the wall-time provenance field in
JSON reports.

Exit codes: 0 ok, 1 validation error, 2 runtime error, 3 empty study.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from bflab import __version__, analysis, attack as atk, config as cfg_mod, data as data_mod
from bflab import plotting
from bflab.boundary import BoundaryConfig
from bflab.errors import BflabError, ConfigError, EmptyStudyError, InputError
from bflab.model import ModelParams, load_model, save_model

STUDY_KINDS = ("transfer", "cosine", "distance", "robustness")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _fmt(v) -> str:
    return repr(float(v))


def _load_doc(args) -> dict:
    doc = cfg_mod.load_config(args.config)
    overrides = {
        "seed": getattr(args, "seed", None),
        "out": getattr(args, "out", None),
        "eps": getattr(args, "eps", None),
        "iters": getattr(args, "iters", None),
        "n_points": getattr(args, "n_points", None),
        "gamma": getattr(args, "gamma", None),
        "sigma": getattr(args, "sigma", None),
    }
    return cfg_mod.apply_overrides(doc, overrides)


def _model_path(out_dir: Path, model_id: str) -> Path:
    return out_dir / "models" / f"{model_id}.json"


def _train_all(doc: dict, ds, out_dir: Path, echo=print) -> tuple[ModelParams, list[tuple[str, ModelParams]]]:
    out_dir.joinpath("models").mkdir(parents=True, exist_ok=True)
    sub_spec = doc["models"]["substitute"]
    sub = cfg_mod.train_model_from_spec(doc, ds, sub_spec)
    sub_path = _model_path(out_dir, sub_spec.get("id", "substitute"))
    save_model(sub, sub_path)
    echo(f"wrote {sub_path}")
    victims = []
    for k, spec in enumerate(doc["models"]["victims"]):
        vid = spec.get("id", f"victim{k}")
        vic = cfg_mod.train_model_from_spec(doc, ds, spec)
        vpath = _model_path(out_dir, vid)
        save_model(vic, vpath)
        echo(f"wrote {vpath}")
        victims.append((vid, vic))
    return sub, victims


def _ensure_models(doc: dict, ds, out_dir: Path) -> tuple[ModelParams, list[tuple[str, ModelParams]]]:
    """Load previously trained model files, training any that are missing."""
    sub_spec = doc["models"]["substitute"]
    specs = [(sub_spec.get("id", "substitute"), sub_spec)] + [
        (spec.get("id", f"victim{k}"), spec) for k, spec in enumerate(doc["models"]["victims"])
    ]
    if not all(_model_path(out_dir, mid).exists() for mid, _ in specs):
        sub, victims = _train_all(doc, ds, out_dir, echo=lambda *_: None)
        return sub, victims
    models = [(mid, load_model(_model_path(out_dir, mid))) for mid, _ in specs]
    return models[0][1], models[1:]


def _pairs(sub: ModelParams, victims) -> list[analysis.ModelPair]:
    return [analysis.ModelPair(sub, vic, vid) for vid, vic in victims]


def _provenance(doc: dict, t0: float) -> dict:
    return cfg_mod.StudyProvenance(
        config_hash=cfg_mod.config_hash(doc),
        seed=doc["seed"],
        tool_version=__version__,
        wall_time=time.time() - t0,
    ).as_dict()


def _report_paths(out_dir: Path, kind: str) -> tuple[Path, Path]:
    return out_dir / "studies" / f"{kind}.json", out_dir / "studies" / f"{kind}.csv"


# ----------------------------------------------------------------- commands


def cmd_train(args) -> int:
    doc = _load_doc(args)
    out_dir = Path(doc["out_dir"])
    ds = cfg_mod.build_dataset(doc)
    _train_all(doc, ds, out_dir)
    data_mod.save_csv(ds, out_dir / "dataset.csv")
    print(f"wrote {out_dir / 'dataset.csv'}")
    return 0


def cmd_attack(args) -> int:
    doc = _load_doc(args)
    out_dir = Path(doc["out_dir"])
    ds = cfg_mod.build_dataset(doc)
    sub, _ = _ensure_models(doc, ds, out_dir)
    test = ds.test_points()
    lo, hi = _parse_range(args.range, len(test))
    attacks = cfg_mod.attack_tuples(doc, ds)

    rec_rows, adv_rows = [], []
    for name, kind, acfg in attacks:
        for idx in range(lo, hi):
            pt = test[idx]
            res = atk.run_attack(kind, sub, pt.x, pt.y, acfg, image_index=idx)
            linf = float(np.max(np.abs(res.adversarial - pt.x)))
            rec_rows.append(
                [idx, name, int(res.success_substitute), _fmt(linf), res.queries, res.fallback_count]
            )
            adv_rows.append([idx, name] + [_fmt(v) for v in res.adversarial])
    dim = ds.dim
    _write_csv(
        out_dir / "attacks" / "records.csv",
        ["index", "attack", "success_substitute", "linf", "queries", "fallback_count"],
        rec_rows,
    )
    _write_csv(
        out_dir / "attacks" / "adversarial.csv",
        ["index", "attack"] + [f"x{i}" for i in range(dim)],
        adv_rows,
    )
    print(f"wrote {out_dir / 'attacks' / 'records.csv'}")
    print(f"wrote {out_dir / 'attacks' / 'adversarial.csv'}")
    return 0


def _parse_range(spec: str | None, n: int) -> tuple[int, int]:
    if not spec:
        return 0, n
    try:
        lo_s, hi_s = spec.split(":")
        lo, hi = int(lo_s or 0), int(hi_s or n)
    except ValueError as exc:
        raise ConfigError(f"bad --range {spec!r}, expected start:end") from exc
    if not (0 <= lo < hi <= n):
        raise InputError(f"--range {spec} out of bounds for {n} test inputs")
    return lo, hi


def cmd_study(args) -> int:
    doc = _load_doc(args)
    if args.kind not in STUDY_KINDS:
        raise ConfigError(f"unknown study kind {args.kind!r}, expected one of {STUDY_KINDS}")
    t0 = time.time()
    out_dir = Path(doc["out_dir"])
    ds = cfg_mod.build_dataset(doc)
    sub, victims = _ensure_models(doc, ds, out_dir)
    sp = cfg_mod.study_params(doc)
    inputs = ds.test_points()[: sp["n_inputs"]]
    attacks = cfg_mod.attack_tuples(doc, ds)
    sigma = sp["natural_sigma"] or cfg_mod.default_sigma(doc, ds)
    bcfg = _study_boundary_cfg(attacks, sigma)
    json_path, csv_path = _report_paths(out_dir, args.kind)

    if args.kind == "transfer":
        tm = analysis.transfer_eval(
            _pairs(sub, victims), inputs, attacks, doc["seed"],
            include_misclassified=sp["include_misclassified"],
        )
        payload = {
            "attacks": tm.attacks,
            "victims": tm.victims,
            "success": tm.success,
            "whitebox": tm.whitebox_flags,
            "n_inputs": tm.n_inputs,
            "skipped": tm.skipped,
            "queries": tm.queries,
            "fallbacks": tm.fallbacks,
        }
        rows = [
            [a, v, int(tm.whitebox_flags[i, j]), _fmt(tm.success[i, j])]
            for i, a in enumerate(tm.attacks)
            for j, v in enumerate(tm.victims)
        ]
        _write_csv(csv_path, ["attack", "victim", "whitebox", "success"], rows)

    elif args.kind == "cosine":
        reports = []
        for k, pair in enumerate(_pairs(sub, victims)):
            rep = analysis.cosine_study(
                pair, inputs, bcfg, sp["protocol"], seed=doc["seed"] + k,
                cap=sp["cap"], tol=sp["tol"],
            )
            reports.append((pair.pair_id, rep))
        payload = {
            pid: {
                "mean_original": r.mean_original,
                "se_original": r.se_original,
                "mean_boundary_n1": r.mean_boundary_n1,
                "se_boundary_n1": r.se_boundary_n1,
                "mean_boundary_nN": r.mean_boundary_nN,
                "se_boundary_nN": r.se_boundary_nN,
                "n_points": r.n_points,
                "n_inputs": r.n_inputs,
                "skipped": r.skipped,
                "censored": r.censored,
                "protocol": r.protocol,
            }
            for pid, r in reports
        }
        _write_csv(
            csv_path,
            ["pair", "protocol", "mean_original", "mean_boundary_n1", "mean_boundary_nN",
             "n_inputs", "skipped", "censored"],
            [
                [pid, r.protocol, _fmt(r.mean_original), _fmt(r.mean_boundary_n1),
                 _fmt(r.mean_boundary_nN), r.n_inputs, r.skipped, r.censored]
                for pid, r in reports
            ],
        )

    elif args.kind == "distance":
        rep = analysis.distance_study(
            _pairs(sub, victims), inputs, attacks, bcfg, cap=sp["cap"], tol=sp["tol"]
        )
        payload = {
            "attacks": rep.attacks,
            "victims": rep.victim_ids,
            "n_inputs": rep.n_inputs,
            "skipped": rep.skipped,
            "cells": [
                {"attack": c.attack, "victim": c.victim_id, "mean": c.mean, "se": c.se,
                 "n_used": c.n_used, "n_censored": c.n_censored}
                for c in rep.cells
            ],
        }
        _write_csv(
            csv_path,
            ["attack", "victim", "mean", "se", "n_used", "n_censored"],
            [[c.attack, c.victim_id, _fmt(c.mean), _fmt(c.se), c.n_used, c.n_censored]
             for c in rep.cells],
        )

    else:  # robustness
        models = [("substitute", sub)] + victims
        rep = analysis.robustness_study(
            models, inputs, sigma=sigma, n_directions=sp["n_directions"],
            seed=doc["seed"], eps=sp["robust_eps"], cap=sp["cap"], tol=sp["tol"],
        )
        payload = {
            "eps": rep.eps,
            "sigma": rep.sigma,
            "n_directions": rep.n_directions,
            "spearman_natural_vs_robust": rep.spearman_natural_vs_robust,
            "rows": [
                {
                    "model": r.model_id,
                    "mean_natural_distance": r.mean_natural_distance,
                    "se_natural_distance": r.se_natural_distance,
                    "mean_adversarial_distance": r.mean_adversarial_distance,
                    "se_adversarial_distance": r.se_adversarial_distance,
                    "robust_accuracy": r.robust_accuracy,
                    "natural_censored": r.natural_censored,
                    "adversarial_censored": r.adversarial_censored,
                }
                for r in rep.rows
            ],
        }
        _write_csv(
            csv_path,
            ["model", "mean_natural_distance", "mean_adversarial_distance", "robust_accuracy",
             "natural_censored", "adversarial_censored"],
            [
                [r.model_id, _fmt(r.mean_natural_distance), _fmt(r.mean_adversarial_distance),
                 _fmt(r.robust_accuracy), r.natural_censored, r.adversarial_censored]
                for r in rep.rows
            ],
        )

    _write_json(json_path, {"kind": args.kind, "payload": payload, "provenance": _provenance(doc, t0)})
    print(f"wrote {json_path}")
    print(f"wrote {csv_path}")
    return 0


def _study_boundary_cfg(attacks, sigma: float) -> BoundaryConfig:
    for _, kind, acfg in attacks:
        if acfg.boundary is not None:
            return acfg.boundary
    return BoundaryConfig(sigma=sigma)


def cmd_ablate(args) -> int:
    doc = _load_doc(args)
    if "ablation" not in doc:
        raise ConfigError("config has no 'ablation' section")
    t0 = time.time()
    out_dir = Path(doc["out_dir"])
    ds = cfg_mod.build_dataset(doc)
    sub, victims = _ensure_models(doc, ds, out_dir)
    sp = cfg_mod.study_params(doc)
    inputs = ds.test_points()[: sp["n_inputs"]]
    attacks = cfg_mod.attack_tuples(doc, ds)
    ab = doc["ablation"]
    chosen = [t for t in attacks if t[0] == ab["attack"]]
    if not chosen:
        raise ConfigError(f"ablation.attack {ab['attack']!r} is not a configured attack name")
    curve = analysis.ablate(ab["parameter"], ab["grid"], chosen[0], _pairs(sub, victims),
                            inputs, doc["seed"])
    payload = {
        "parameter": curve.parameter,
        "grid": curve.grid,
        "success": curve.success,
        "per_victim": curve.per_victim,
    }
    json_path = out_dir / "ablation" / f"{curve.parameter}.json"
    csv_path = out_dir / "ablation" / f"{curve.parameter}.csv"
    _write_json(json_path, {"kind": "ablation", "payload": payload, "provenance": _provenance(doc, t0)})
    _write_csv(
        csv_path,
        ["parameter", "value", "mean_blackbox_success"],
        [[curve.parameter, _fmt(v), _fmt(s)] for v, s in zip(curve.grid, curve.success)],
    )
    print(f"wrote {json_path}")
    print(f"wrote {csv_path}")
    return 0


def cmd_plot(args) -> int:
    doc = _load_doc(args)
    out_dir = Path(doc["out_dir"])
    ds = cfg_mod.build_dataset(doc)
    sub, victims = _ensure_models(doc, ds, out_dir)
    if ds.dim != 2 and args.slice is None:
        raise ConfigError(
            f"input_dim is {ds.dim}: pass --slice i,j to choose the two plotted coordinates"
        )
    dims = (0, 1)
    if args.slice is not None:
        try:
            i_s, j_s = args.slice.split(",")
            dims = (int(i_s), int(j_s))
        except ValueError as exc:
            raise ConfigError(f"bad --slice {args.slice!r}, expected i,j") from exc
    test = ds.test_points()
    if not (0 <= args.index < len(test)):
        raise InputError(f"--index {args.index} out of range for {len(test)} test inputs")
    pt = test[args.index]
    attacks = cfg_mod.attack_tuples(doc, ds)
    name, kind, acfg = attacks[0]
    if args.attack is not None:
        match = [t for t in attacks if t[0] == args.attack]
        if not match:
            raise ConfigError(f"--attack {args.attack!r} is not a configured attack name")
        name, kind, acfg = match[0]
    bcfg = acfg.boundary or _study_boundary_cfg(attacks, cfg_mod.default_sigma(doc, ds))
    scene = plotting.build_scene(
        sub, victims[0][1] if victims else None, pt.x, pt.y, bcfg, seed=doc["seed"],
        attack_kind=kind, attack_cfg=acfg, dims=dims,
    )
    out = out_dir / "plots" / f"scene_{args.index}_{name}.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    plotting.save_svg(scene, out)
    print(f"wrote {out}")
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bflab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="path to the experiment JSON document")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--eps", type=float, default=None, help="override every attack epsilon")
        sp.add_argument("--iters", type=int, default=None, help="override attack iterations")
        sp.add_argument("--n-points", dest="n_points", type=int, default=None,
                        help="override boundary probe count")
        sp.add_argument("--gamma", type=float, default=None, help="override shrinkage factor")
        sp.add_argument("--sigma", type=float, default=None, help="override probe direction sigma")

    sp = sub.add_parser("train", help="train and persist all configured models")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("attack", help="craft adversarial examples, write per-example CSV records")
    common(sp)
    sp.add_argument("--range", default=None, help="test-input index range start:end")
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("study", help="run a diagnostic study and write JSON+CSV reports")
    common(sp)
    sp.add_argument("--kind", required=True, choices=STUDY_KINDS)
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("ablate", help="sweep gamma or n_points and record the transfer curve")
    common(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("plot", help="render the attack-neighborhood scene as SVG")
    common(sp)
    sp.add_argument("--index", type=int, default=0, help="test input index to plot")
    sp.add_argument("--attack", default=None, help="attack name for the trajectory")
    sp.add_argument("--slice", default=None, help="two coordinates i,j to plot for dim>2")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EmptyStudyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BflabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
