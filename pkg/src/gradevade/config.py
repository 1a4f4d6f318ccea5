"""Experiment configuration: one JSON document per experiment.

The CLI loads the file, applies dotted-path overrides from --set flags,
validates every cross-field constraint, and echoes the fully resolved
document into the output directory for provenance.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack import AttackSpec, DistanceSpec
from .benchmark import synthetic_pdf_dataset
from .data import (
    Dataset,
    FeatureBounds,
    cap_features,
    load_dense_csv,
    load_idx_images,
    load_sparse_counts,
)
from .kernels import KernelSpec
from .mimicry import KdeParams
from .models import ModelSpec
from .scenario import ScenarioSpec


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


_DEFAULTS = {
    "seed": 0,
    "output_dir": "out",
    "jobs": 1,
    "dataset": {
        "kind": "synthetic_pdf",
        "n_legit": 500,
        "n_malicious": 500,
        "dim": 100,
        "feature_cap": None,
        "path": None,
        "labels_path": None,
        "label_column": "label",
        "class_neg": 7,
        "class_pos": 3,
    },
    "split": {"n_train": 500, "n_test": 500, "n_splits": 5},
    "models": [{"kind": "linear_svm", "C": 1.0}],
    "scenario": {
        "kinds": ["PK"],
        "n_q": 100,
        "relabel_with_target": True,
        "n_surrogate_repeats": 5,
        "surrogate": {},
    },
    "attack": {
        "mode": "discrete",
        "distance": "l1",
        "d_max_grid": [0, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50],
        "step_t": 1.0,
        "step_norm": "l2",
        "lambdas": [0.0],
        "epsilon": 1e-9,
        "max_iters": 500,
        "bounds": {"lower": 0.0, "upper": None, "increment_only": True},
        "kde": {"kernel": "laplacian", "h": 10.0, "truncation_k": 50, "grad": "corrected"},
    },
    "evaluation": {"fp_target": 0.005},
}


def _merge(defaults, value):
    if isinstance(defaults, dict) and isinstance(value, dict):
        out = {}
        for key in defaults:
            out[key] = _merge(defaults[key], value[key]) if key in value else _deep_copy(defaults[key])
        for key in value:
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r}")
        return out
    return _deep_copy(value)


def _deep_copy(v):
    return json.loads(json.dumps(v))


def apply_override(doc: dict, dotted: str):
    """Apply one `--set a.b.c=value` override; the value parses as JSON if it can."""
    if "=" not in dotted:
        raise ConfigError(f"--set expects key=value, got {dotted!r}")
    key, raw = dotted.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = doc
    for p in parts[:-1]:
        if isinstance(node, list):
            node = node[int(p)]
        else:
            node = node.setdefault(p, {})
    leaf = parts[-1]
    if isinstance(node, list):
        node[int(leaf)] = value
    else:
        node[leaf] = value


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: str
    jobs: int
    dataset: dict
    n_train: int
    n_test: int
    n_splits: int
    model_grid: list[ModelSpec]
    scenario: ScenarioSpec
    scenario_kinds: list[str]
    attack: AttackSpec
    lambdas: list[float]
    d_max_grid: list[float]
    kde: KdeParams
    fp_target: float
    resolved: dict = field(repr=False, default_factory=dict)


def _parse_model(entry: dict, where: str) -> ModelSpec:
    kind = entry.get("kind")
    try:
        if kind == "linear_svm":
            return ModelSpec(kind="linear_svm", C=float(entry.get("C", 1.0)))
        if kind == "svm":
            kd = entry.get("kernel", {})
            kernel = KernelSpec(
                kind=kd.get("kind", "rbf"),
                gamma=float(kd.get("gamma", 1.0)),
                degree=int(kd.get("degree", 2)),
                coef0=float(kd.get("coef0", 0.0)),
            )
            return ModelSpec(kind="svm", C=float(entry.get("C", 1.0)), kernel=kernel)
        if kind == "mlp":
            return ModelSpec(
                kind="mlp",
                m=int(entry.get("m", 10)),
                epochs=int(entry.get("epochs", 2000)),
                learning_rate=float(entry.get("learning_rate", 1.0)),
            )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: unknown model kind {kind!r}")


def parse_config(doc: dict) -> ExperimentConfig:
    """Fill defaults, validate, and build the typed experiment plan."""
    resolved = _merge(_DEFAULTS, doc)
    try:
        ds = resolved["dataset"]
        if ds["kind"] not in ("synthetic_pdf", "csv", "idx", "sparse"):
            raise ConfigError(f"dataset.kind: unknown kind {ds['kind']!r}")
        if ds["kind"] in ("csv", "sparse") and not ds.get("path"):
            raise ConfigError(f"dataset.kind={ds['kind']} requires dataset.path")
        if ds["kind"] == "idx" and not (ds.get("path") and ds.get("labels_path")):
            raise ConfigError("dataset.kind=idx requires dataset.path and dataset.labels_path")

        if not resolved["models"]:
            raise ConfigError("models: grid must be non-empty")
        model_grid = [_parse_model(m, f"models[{i}]") for i, m in enumerate(resolved["models"])]

        sc = resolved["scenario"]
        for kind in sc["kinds"]:
            if kind not in ("PK", "LK"):
                raise ConfigError(f"scenario.kinds: unknown kind {kind!r}")
        if not sc["kinds"]:
            raise ConfigError("scenario.kinds must be non-empty")
        scenario = ScenarioSpec(
            kind=sc["kinds"][0],
            n_q=int(sc["n_q"]),
            relabel_with_target=bool(sc["relabel_with_target"]),
            n_surrogate_repeats=int(sc["n_surrogate_repeats"]),
            surrogate_params=dict(sc["surrogate"]),
        )

        atk = resolved["attack"]
        bounds_doc = atk["bounds"]
        upper = bounds_doc["upper"]
        bounds = FeatureBounds(
            lower=float(bounds_doc["lower"]),
            upper=np.inf if upper is None else float(upper),
            increment_only=bool(bounds_doc["increment_only"]),
        )
        if not atk["d_max_grid"]:
            raise ConfigError("attack.d_max_grid must be non-empty")
        d_grid = [float(b) for b in atk["d_max_grid"]]
        if any(b < 0 for b in d_grid):
            raise ConfigError("attack.d_max_grid values must be nonnegative")
        lambdas = [float(l) for l in atk["lambdas"]]
        if any(l < 0 for l in lambdas):
            raise ConfigError("attack.lambdas values must be nonnegative")
        kde_doc = atk["kde"]
        kde = KdeParams(
            kernel_kind=kde_doc["kernel"],
            h=float(kde_doc["h"]),
            truncation_k=int(kde_doc["truncation_k"]),
            grad_form=kde_doc["grad"],
        )
        attack = AttackSpec(
            distance=DistanceSpec(atk["distance"]),
            d_max=max(d_grid),
            step_t=float(atk["step_t"]),
            lam=0.0,
            epsilon=float(atk["epsilon"]),
            max_iters=int(atk["max_iters"]),
            bounds=bounds,
            mode=atk["mode"],
            step_norm=atk["step_norm"],
        )

        ev = resolved["evaluation"]
        fp_target = float(ev["fp_target"])
        if not (0 <= fp_target < 1):
            raise ConfigError("evaluation.fp_target must lie in [0, 1)")

        split = resolved["split"]
        return ExperimentConfig(
            seed=int(resolved["seed"]),
            output_dir=str(resolved["output_dir"]),
            jobs=int(resolved["jobs"]),
            dataset=ds,
            n_train=int(split["n_train"]),
            n_test=int(split["n_test"]),
            n_splits=int(split["n_splits"]),
            model_grid=model_grid,
            scenario=scenario,
            scenario_kinds=list(sc["kinds"]),
            attack=attack,
            lambdas=lambdas,
            d_max_grid=d_grid,
            kde=kde,
            fp_target=fp_target,
            resolved=resolved,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    for o in overrides or []:
        apply_override(doc, o)
    return parse_config(doc)


def echo_config(cfg: ExperimentConfig, out_dir):
    """Write the fully resolved config next to the run outputs."""
    os.makedirs(out_dir, exist_ok=True)
    with open(Path(out_dir) / "config_resolved.json", "w") as fh:
        json.dump(cfg.resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset_from_config(cfg: ExperimentConfig) -> Dataset:
    ds = cfg.dataset
    kind = ds["kind"]
    if kind == "synthetic_pdf":
        data = synthetic_pdf_dataset(
            n_legit=int(ds["n_legit"]),
            n_malicious=int(ds["n_malicious"]),
            dim=int(ds["dim"]),
            seed=cfg.seed,
        )
    elif kind == "csv":
        data = load_dense_csv(ds["path"], label_column=ds["label_column"])
    elif kind == "sparse":
        data = load_sparse_counts(ds["path"])
    else:
        data = load_idx_images(
            ds["path"], ds["labels_path"], class_neg=int(ds["class_neg"]), class_pos=int(ds["class_pos"])
        )
    if ds.get("feature_cap") is not None:
        data = cap_features(data, float(ds["feature_cap"]))
    return data
