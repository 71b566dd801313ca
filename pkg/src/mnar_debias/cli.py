"""Command-line workbench.

Every subcommand reads an optional JSON config (unknown keys are rejected),
merges it over its defaults, applies ``--seed``, and writes its artifacts to
``--out`` together with the resolved config, its SHA-256 and the seed.
Exit status is 0 on success, 1 on a domain error and 2 on an I/O error; on
failure a JSON error object is printed to stderr.

Environment variables ``MNAR_DEBIAS_OUT`` and ``MNAR_DEBIAS_THREADS``
supply ``--out`` and ``--threads`` when the flags are absent.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import warnings
from dataclasses import replace
from typing import Callable, Optional

import numpy as np

from . import analytics, dynamic, experiment
from .core import ErrorSpec, ObservationMask, imputed_error, pointwise_error
from .errors import MNARError
from .estimators import EstimatorSpec, evaluate
from .ingest import read_ratings
from .metrics import evaluate_predictions
from .propensity import fit_propensity
from .shaping import BUILTIN_KINDS, get_shaping
from .simulation import SyntheticSpec, monte_carlo, stream
from .training import MFModel, TrainConfig, TrainTrace, train, train_joint

FLOAT_FORMAT = "{:.6g}"

_SYNTH = {
    "M": 200, "N": 300, "latent_rank": 4, "propensity_slope": 1.5, "propensity_center": 2.0,
    "propensity_floor": 0.01, "label_mode": "binary", "noise": 0.5, "binarize_threshold": 3.0,
}
_DATA = {"data": None, "ratings": None, "ratings_format": "triples", "binarize_threshold": 3.0, "remap": False}
_TRAIN = {
    "loss_family": "d_dr", "shaping": "log1p", "w1": 1.0, "w2": 0.1, "learning_rate": 0.05,
    "weight_decay": 1e-4, "epochs": 100, "batch_size": 1024, "k": 8, "optimizer": "sgd",
    "joint": True, "propensity": "oracle",
}

DEFAULTS: dict[str, dict] = {
    "generate": {**_SYNTH, "test_rate": 0.05, "seed": 0},
    "estimate": {
        **_DATA, "family": "d_dr", "shaping": "log1p", "alpha": "schedule", "w1": 1.0, "w2": 0.1,
        "propensity": "oracle", "error_kind": "squared", "imputation_scale": 1.0,
        "imputation_center": None, "model": None, "snips_normalizer": "shaped", "seed": 0,
    },
    "analyze": {
        "data": None, "families": ["naive", "eib", "ips", "dr", "d_ips", "d_dr"], "shaping": "log1p",
        "alpha": "schedule", "w1": 1.0, "w2": 0.1, "propensity": "oracle", "rho": 0.05,
        "hypothesis_count": 1, "model": None, "imputation_center": None, "seed": 0,
    },
    "alpha": {
        "w1": 1.0, "w2": 0.1, "shapings": list(BUILTIN_KINDS), "p_start": 0.01, "p_stop": 1.0, "p_num": 100,
        "bias_metric": "identity", "variance_metric": "identity", "seed": 0,
    },
    "mc-verify": {
        "family": "ips", "shaping": "identity", "alpha": 1.0, "rows": 4, "cols": 4, "p_low": 0.05,
        "p_high": 0.95, "replicas": 200_000, "oracle_propensity": True, "seed": 0,
    },
    "train": {**_DATA, **_TRAIN, "seed": 0},
    "evaluate": {"data": None, "model": None, "k": 5, "seed": 0},
    "sweep": {
        **_SYNTH, **_TRAIN, "test_rate": 0.05, "seeds": 10, "shapings": list(BUILTIN_KINDS),
        "w2_values": [0.02, 0.04, 0.06, 0.08, 1.0], "k_ndcg": 5, "seed": 0,
    },
    "report": {
        "w1": 1.0, "w2": 0.1, "shapings": list(BUILTIN_KINDS), "p_num": 50, "alpha_num": 51, "seed": 0,
    },
}


class ConfigError(MNARError, ValueError):
    """A config file has unknown keys or invalid values."""


def resolve_config(command: str, path: Optional[str], seed: Optional[int]) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(user) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys for {command!r}: {unknown}")
        cfg.update(user)
    if seed is not None:
        cfg["seed"] = seed
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


class Output:
    """Artifact writer stamping every file with the config hash and seed."""

    def __init__(self, out_dir: str, command: str, cfg: dict):
        self.dir = out_dir
        self.command = command
        self.cfg = cfg
        self.hash = config_hash(cfg)
        os.makedirs(out_dir, exist_ok=True)
        self.write_json("config.json", {})

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def write_json(self, name: str, result) -> str:
        body = {"command": self.command, "config": self.cfg, "config_hash": self.hash,
                "seed": self.cfg["seed"], "result": result}
        with open(self.path(name), "w") as fh:
            json.dump(body, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return self.path(name)

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> str:
        with open(self.path(name), "w", newline="") as fh:
            fh.write(f"# config_hash={self.hash} seed={self.cfg['seed']}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([FLOAT_FORMAT.format(x) if isinstance(x, float) else x for x in row])
        return self.path(name)


def read_csv(path: str) -> tuple[dict, list[dict]]:
    """Parse an artifact CSV into its stamp and rows (values left as strings)."""
    with open(path) as fh:
        stamp = dict(kv.split("=", 1) for kv in fh.readline().lstrip("# ").split())
        return stamp, list(csv.DictReader(fh))


def _mask_to_list(m) -> list:
    return np.asarray(m.bits if isinstance(m, ObservationMask) else m, dtype=int).tolist()


def _load_dataset(path: str) -> dict:
    with open(path) as fh:
        d = json.load(fh)["result"]
    out = {k: np.asarray(v, dtype=float) for k, v in d.items() if k in ("y_true", "p_true")}
    for k in ("train_mask", "test_mask"):
        if k in d:
            out[k] = np.asarray(d[k], dtype=bool)
    return out


def _data(cfg: dict) -> dict:
    """Dataset from a ``generate`` artifact or a ratings file (binarised, no ground truth)."""
    if cfg.get("data"):
        return _load_dataset(cfg["data"])
    if cfg.get("ratings"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            r = read_ratings(cfg["ratings"], cfg["ratings_format"], remap=cfg["remap"])
        for w in caught:
            print(str(w.message), file=sys.stderr)
        return {"y_true": np.asarray(r.binarized(cfg["binarize_threshold"])), "train_mask": r.mask.bits}
    raise ConfigError("config needs a 'data' (generate artifact) or 'ratings' path")


def _propensity(data: dict, kind: str):
    if kind == "oracle":
        if "p_true" not in data:
            raise ConfigError("oracle propensities need a dataset with p_true")
        return data["p_true"]
    return np.asarray(fit_propensity(data["train_mask"], kind).p_hat)


def _predictions(data: dict, model_path: Optional[str]) -> np.ndarray:
    if model_path:
        return MFModel.load(model_path).predict()
    mask = data["train_mask"]
    return np.full(mask.shape, float(data["y_true"][mask].mean()))


def _alpha(cfg: dict, p_hat: np.ndarray):
    if cfg["alpha"] == "schedule":
        return dynamic.alpha_schedule(dynamic.JointObjective(cfg["w1"], cfg["w2"]), cfg["shaping"], p_hat)
    return float(cfg["alpha"])


def _train_config(cfg: dict, **over) -> TrainConfig:
    tc = TrainConfig(
        learning_rate=cfg["learning_rate"], weight_decay=cfg["weight_decay"], epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], loss_family=cfg["loss_family"],
        objective=dynamic.JointObjective(cfg["w1"], cfg["w2"]), shaping=cfg["shaping"], seed=cfg["seed"],
        k=cfg["k"], optimizer=cfg["optimizer"],
    )
    return replace(tc, **over) if over else tc


def _synthetic(cfg: dict, seed: int) -> SyntheticSpec:
    return SyntheticSpec(**{k: cfg[k] for k in _SYNTH}, seed=seed)


def cmd_generate(cfg: dict, out: Output, threads: int) -> None:
    split = experiment.make_split(_synthetic(cfg, cfg["seed"]), cfg["test_rate"])
    out.write_json("dataset.json", {
        "y_true": np.asarray(split.y_true).tolist(),
        "p_true": np.asarray(split.p_true).tolist(),
        "train_mask": _mask_to_list(split.train_mask),
        "test_mask": _mask_to_list(split.test_mask),
    })


def estimate_value(cfg: dict) -> dict:
    data = _data(cfg)
    mask = data["train_mask"]
    y = data["y_true"]
    y_pred = _predictions(data, cfg["model"])
    center = cfg["imputation_center"]
    if center is None:
        center = float(y[mask].mean())
    es = ErrorSpec(cfg["error_kind"], cfg["imputation_scale"], center)
    # Unobserved labels never enter an estimate; zero them so nothing can leak.
    e = np.asarray(pointwise_error(np.where(mask, y, 0.0), y_pred, es))
    e_hat = np.asarray(imputed_error(y_pred, es))
    fam = cfg["family"]
    p_hat = _propensity(data, cfg["propensity"]) if fam not in ("real", "naive", "eib") else None
    alpha = _alpha(cfg, p_hat) if fam.startswith("d_") else 1.0
    spec = EstimatorSpec(fam, es, get_shaping(cfg["shaping"]), alpha, snips_normalizer=cfg["snips_normalizer"])
    value = evaluate(spec, e, e_hat, p_hat, mask)
    result = {"family": fam, "estimate": value, "observed": int(mask.sum()), "cells": int(mask.size)}
    if "test_mask" in data:
        result["real"] = float(np.mean(np.asarray(pointwise_error(y, y_pred, es))))
    return result


def cmd_estimate(cfg: dict, out: Output, threads: int) -> None:
    out.write_json("estimate.json", estimate_value(cfg))


def cmd_analyze(cfg: dict, out: Output, threads: int) -> None:
    data = _data(cfg)
    if "p_true" not in data:
        raise ConfigError("analyze needs a dataset with p_true")
    y, p = data["y_true"], data["p_true"]
    y_pred = _predictions(data, cfg["model"])
    center = cfg["imputation_center"]
    if center is None:
        center = float(y[data["train_mask"]].mean())
    es = ErrorSpec("squared", 1.0, center)
    e = np.asarray(pointwise_error(y, y_pred, es))
    e_hat = np.asarray(imputed_error(y_pred, es))
    p_hat = _propensity(data, cfg["propensity"])
    alpha = _alpha(cfg, p_hat)
    shaping = get_shaping(cfg["shaping"])
    reports = {}
    for fam in cfg["families"]:
        dyn = fam.startswith("d_")
        a = alpha if dyn else 1.0
        sh = shaping if dyn else get_shaping("identity")
        size = int(data["train_mask"].sum()) if fam == "naive" else None
        r = analytics.bias_variance_report(fam, e, e_hat, p, p_hat, size, sh, a)
        entry = {k: v for k, v in r.to_dict().items() if not k.startswith("per_cell")}
        if fam in ("ips", "d_ips", "dr", "d_dr"):
            z = e if fam.endswith("ips") else e - e_hat
            # IPS and DR are the identity-shaping, alpha = 1 corners of their dynamic forms.
            entry["tail_bound"] = analytics.tail_bound("d_" + fam.removeprefix("d_"), z, p_hat, sh, a, cfg["rho"])
        reports[fam] = entry
    out.write_json("analysis.json", {"real": float(e.mean()), "estimators": reports})


def cmd_alpha(cfg: dict, out: Output, threads: int) -> None:
    obj = dynamic.JointObjective(cfg["w1"], cfg["w2"], cfg["bias_metric"], cfg["variance_metric"])
    grid = np.linspace(cfg["p_start"], cfg["p_stop"], cfg["p_num"])
    rows = []
    for name in cfg["shapings"]:
        sh = get_shaping(name)
        for p in grid:
            p = float(p)
            a = (dynamic.alpha_opt_closed_form(obj, sh, p) if obj.is_identity
                 else dynamic.alpha_opt_numerical(obj, sh, p, p))
            rows.append([name, p, a, float(analytics.h_B(sh, p, p, a)), float(analytics.h_V(sh, p, p, a)),
                         float(dynamic.objective_value(obj, sh, p, p, a))])
    out.write_csv("alpha.csv", ["shaping", "p", "alpha_opt", "h_B", "h_V", "objective"], rows)


def cmd_mc_verify(cfg: dict, out: Output, threads: int) -> None:
    rng = stream(cfg["seed"], 999)
    shape = (cfg["rows"], cfg["cols"])
    e = rng.random(shape)
    e_hat = rng.random(shape)
    p = rng.uniform(cfg["p_low"], cfg["p_high"], shape)
    p_hat = p if cfg["oracle_propensity"] else np.clip(p * rng.uniform(0.8, 1.2, shape), 1e-3, 1.0)
    spec = EstimatorSpec(cfg["family"], shaping=get_shaping(cfg["shaping"]), alpha=cfg["alpha"],
                         naive_normalizer=float(np.sum(p)) if cfg["family"] == "naive" else None)
    res = monte_carlo(spec, e, e_hat, p, p_hat, cfg["replicas"], cfg["seed"], threads=threads,
                      values_path=out.path("mc_values.csv"))
    out.write_json("mc_report.json", res.to_dict() | {"instance": {
        "e": e.tolist(), "e_hat": e_hat.tolist(), "p_true": p.tolist(), "p_hat": p_hat.tolist()}})


def cmd_train(cfg: dict, out: Output, threads: int) -> None:
    data = _data(cfg)
    p_hat = _propensity(data, cfg["propensity"])
    tc = _train_config(cfg)
    trace = TrainTrace()
    y, mask = data["y_true"], data["train_mask"]
    meta = {"config_hash": out.hash, "seed": cfg["seed"]}
    if cfg["joint"] and tc.loss_family in experiment.JOINT_FAMILIES:
        models = train_joint(y, mask, p_hat, tc, trace=trace)
        models.prediction.save(out.path("model.json"), meta)
        models.imputation.save(out.path("imputation_model.json"), meta)
        rows = [[i, float(a), float(b)] for i, (a, b) in enumerate(trace.epoch_losses)]
        out.write_csv("train_log.csv", ["epoch", "loss", "imputation_loss"], rows)
    else:
        train(y, mask, p_hat, tc, trace=trace).save(out.path("model.json"), meta)
        out.write_csv("train_log.csv", ["epoch", "loss"], [[i, float(v)] for i, v in enumerate(trace.epoch_losses)])


def cmd_evaluate(cfg: dict, out: Output, threads: int) -> None:
    if not cfg["model"]:
        raise ConfigError("evaluate needs a 'model' checkpoint path")
    data = _data(cfg)
    if "test_mask" not in data:
        raise ConfigError("evaluate needs a dataset with a test_mask")
    res = evaluate_predictions(MFModel.load(cfg["model"]).predict(), data["y_true"], data["test_mask"], cfg["k"])
    out.write_json("evaluation.json", {"auc": res.auc, "ndcg_at_k": res.ndcg_at_k, "k": res.k,
                                       "users": len(res.per_user_ndcg)})


def cmd_sweep(cfg: dict, out: Output, threads: int) -> None:
    spec = _synthetic(cfg, cfg["seed"])
    seeds = [cfg["seed"] + s for s in range(cfg["seeds"])]
    rows = []
    for name in cfg["shapings"]:
        for w2 in cfg["w2_values"]:
            tc = _train_config(cfg, shaping=name, objective=dynamic.JointObjective(cfg["w1"], w2))
            res = [experiment.run_trial(spec, tc, s, cfg["propensity"], cfg["test_rate"], cfg["k_ndcg"], cfg["joint"])
                   for s in seeds]
            aucs = np.array([r.auc for r in res])
            ndcgs = np.array([r.ndcg_at_k for r in res])
            rows.append([name, float(cfg["w1"]), float(w2), float(aucs.mean()), float(aucs.std()),
                         float(ndcgs.mean()), float(ndcgs.std()), len(seeds)])
    out.write_csv("sweep.csv", ["shaping", "w1", "w2", "auc_mean", "auc_std", "ndcg_mean", "ndcg_std", "seeds"],
                  rows)


def cmd_report(cfg: dict, out: Output, threads: int) -> None:
    obj = dynamic.JointObjective(cfg["w1"], cfg["w2"])
    ps = np.linspace(0.01, 1.0, cfg["p_num"])
    alphas = np.linspace(0.0, 1.0, cfg["alpha_num"])
    rows = []
    for name in cfg["shapings"]:
        sh = get_shaping(name)
        for p in ps:
            hb = analytics.h_B(sh, p, p, alphas)
            hv = analytics.h_V(sh, p, p, alphas)
            obj_v = dynamic.objective_value(obj, sh, p, p, alphas)
            rows.extend([name, float(p), float(a), float(b), float(v), float(o)]
                        for a, b, v, o in zip(alphas, hb, hv, obj_v))
    out.write_csv("surfaces.csv", ["shaping", "p", "alpha", "h_B", "h_V", "objective"], rows)


COMMANDS: dict[str, Callable[[dict, Output, int], None]] = {
    "generate": cmd_generate, "estimate": cmd_estimate, "analyze": cmd_analyze, "alpha": cmd_alpha,
    "mc-verify": cmd_mc_verify, "train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mnar-debias", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory (default: $MNAR_DEBIAS_OUT or ./out)")
        p.add_argument("--threads", type=int, help="worker threads (default: $MNAR_DEBIAS_THREADS or 1)")
    return parser


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out or os.environ.get("MNAR_DEBIAS_OUT") or "out"
    try:
        threads = args.threads if args.threads is not None else int(os.environ.get("MNAR_DEBIAS_THREADS", "1"))
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        cfg = resolve_config(args.command, args.config, args.seed)
        COMMANDS[args.command](cfg, Output(out_dir, args.command, cfg), threads)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(2, exc)
    except (MNARError, ValueError, KeyError, TypeError) as exc:
        return _fail(1, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
