"""Command-line surface: train, attack, sweep, and export-digits.

Exit codes: 0 success, 2 configuration error, 3 partial completion (some
grid cells failed; see the failure manifest in the output directory).

Trace file format (gradevade-trace/1): header comments carry the run
outcome, then one `m,F,g_target,d_from_x0` row per iterate, then the
start / first-evading / final vectors as `# vector <name>: ...` lines.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .attack import AttackSpec, AttackTrace, DistanceSpec, run_attack
from .config import (
    ConfigError,
    ExperimentConfig,
    echo_config,
    load_config,
    load_dataset_from_config,
)
from .data import LEGITIMATE, MALICIOUS, split_train_test
from .evaluation import calibrate_threshold, sweep
from .mimicry import KdeParams
from .models import load_model, save_model, train_from_spec, with_offset
from .scenario import _predict_many

TRACE_FORMAT_VERSION = "gradevade-trace/1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


# ---------------------------------------------------------------------------
# Trace files.
# ---------------------------------------------------------------------------

def first_evading_index(trace: AttackTrace, offset: float) -> int | None:
    for i, g in enumerate(trace.g_values):
        if g - offset < 0:
            return i
    return None


def write_trace(trace: AttackTrace, distance: DistanceSpec, offset: float, path):
    dists = trace.distances_from_start(distance)
    evade_idx = first_evading_index(trace, offset)
    with open(path, "w") as fh:
        fh.write(f"# {TRACE_FORMAT_VERSION}\n")
        fh.write(f"# evaded: {'true' if trace.evaded else 'false'}\n")
        fh.write(f"# termination: {trace.termination}\n")
        fh.write(f"# iterations: {trace.iterations}\n")
        fh.write("# columns: m,F,g_target,d_from_x0\n")
        for m, (f_val, g_val, d_val) in enumerate(zip(trace.objective_values, trace.g_values, dists)):
            fh.write(f"{m},{f_val!r},{g_val!r},{d_val!r}\n")
        vectors = [("x0", trace.points[0])]
        if evade_idx is not None:
            vectors.append(("x_first_evading", trace.points[evade_idx]))
        vectors.append(("x_star", trace.points[-1]))
        for name, vec in vectors:
            fh.write(f"# vector {name}: " + " ".join(repr(float(v)) for v in vec) + "\n")


def read_trace(path) -> dict:
    meta = {}
    rows = []
    vectors = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"# {TRACE_FORMAT_VERSION}":
        raise ValueError(f"{path}: not a {TRACE_FORMAT_VERSION} file")
    for line in lines[1:]:
        if line.startswith("# vector "):
            name, _, payload = line[len("# vector "):].partition(": ")
            vectors[name] = np.array([float(v) for v in payload.split()])
        elif line.startswith("#"):
            key, _, val = line[2:].partition(": ")
            meta[key] = val
        elif line.strip():
            m, f_val, g_val, d_val = line.split(",")
            rows.append((int(m), float(f_val), float(g_val), float(d_val)))
    return {"meta": meta, "rows": rows, "vectors": vectors}


# ---------------------------------------------------------------------------
# PGM image export.
# ---------------------------------------------------------------------------

def write_pgm(vec: np.ndarray, path):
    """Render a [0,1] feature vector as a square 8-bit grayscale PGM (P5)."""
    vec = np.asarray(vec, dtype=float)
    side = math.isqrt(len(vec))
    if side * side != len(vec):
        raise ValueError(f"vector of length {len(vec)} is not a square image")
    data = np.clip(np.round(vec * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        dims = fh.readline().split()
        maxval = int(fh.readline())
        w, h = int(dims[0]), int(dims[1])
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.astype(float) / maxval


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------

def _prepare_split(cfg: ExperimentConfig, split_idx: int):
    data = load_dataset_from_config(cfg)
    seed = int(np.random.SeedSequence([cfg.seed, split_idx, 0, 1]).generate_state(1)[0])
    return split_train_test(data, cfg.n_train, cfg.n_test, seed=seed)


def cmd_train(cfg: ExperimentConfig, out_dir: Path) -> int:
    echo_config(cfg, out_dir)
    models_dir = out_dir / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"models": [], "failures": []}
    for split_idx in range(cfg.n_splits):
        train, _test = _prepare_split(cfg, split_idx)
        for model_idx, spec in enumerate(cfg.model_grid):
            name = f"{spec.descriptor()}_split{split_idx}".replace("(", "_").replace(")", "").replace(",", "_").replace("=", "")
            path = models_dir / f"{name}.json"
            try:
                seed = int(np.random.SeedSequence([cfg.seed, split_idx, model_idx, 2]).generate_state(1)[0])
                model = train_from_spec(spec, train, seed=seed)
                preds = _predict_many(model, train.X)
                acc = float(np.mean(preds == train.y))
                save_model(model, path)
                manifest["models"].append(
                    {
                        "path": str(path),
                        "classifier": spec.descriptor(),
                        "split": split_idx,
                        "train_accuracy": acc,
                    }
                )
            except Exception as exc:
                manifest["failures"].append(
                    {"classifier": spec.descriptor(), "split": split_idx, "error": f"{type(exc).__name__}: {exc}"}
                )
    with open(out_dir / "train_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for entry in manifest["models"]:
        print(f"trained {entry['classifier']} split {entry['split']}: train_acc={entry['train_accuracy']:.4f}")
    for entry in manifest["failures"]:
        print(f"FAILED {entry['classifier']} split {entry['split']}: {entry['error']}", file=sys.stderr)
    return EXIT_PARTIAL if manifest["failures"] else EXIT_OK


def cmd_attack(cfg: ExperimentConfig, out_dir: Path, model_path: str, sample_index: int,
               split_idx: int = 0, lam: float | None = None, force: bool = False) -> int:
    echo_config(cfg, out_dir)
    model = load_model(model_path)
    _train, test = _prepare_split(cfg, split_idx)
    legit_scores = model.discriminant_many(test.X[test.y == LEGITIMATE])
    theta = calibrate_threshold(legit_scores, cfg.fp_target)
    target = with_offset(model, theta)

    malicious_idx = np.flatnonzero(test.y == MALICIOUS)
    if not (0 <= sample_index < len(malicious_idx)):
        raise ConfigError(f"sample index {sample_index} out of range (0..{len(malicious_idx) - 1})")
    x0 = test.X[malicious_idx[sample_index]]
    if target.predict(x0) == LEGITIMATE and not force:
        raise ConfigError(
            f"sample {sample_index} is already misclassified at the calibrated threshold; use --force to attack it anyway"
        )

    lam_val = cfg.lambdas[0] if lam is None else lam
    spec = cfg.attack
    spec = AttackSpec(
        distance=spec.distance,
        d_max=max(cfg.d_max_grid),
        step_t=spec.step_t,
        lam=lam_val,
        epsilon=spec.epsilon,
        max_iters=spec.max_iters,
        bounds=spec.bounds,
        mode=spec.mode,
        step_norm=spec.step_norm,
        mimicry=cfg.kde.build(test.X[test.y == LEGITIMATE]) if lam_val > 0 else None,
    )
    trace = run_attack(target, spec, x0)
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    trace_path = traces_dir / f"trace_split{split_idx}_sample{sample_index}.txt"
    write_trace(trace, spec.distance, theta, trace_path)
    final_g = trace.g_values[-1]
    print(
        f"attacked sample {sample_index}: iterations={trace.iterations} evaded={str(trace.evaded).lower()} "
        f"final_g={final_g:.6g} termination={trace.termination} trace={trace_path}"
    )
    return EXIT_OK


def _write_rows(path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def cmd_sweep(cfg: ExperimentConfig, out_dir: Path) -> int:
    echo_config(cfg, out_dir)
    data = load_dataset_from_config(cfg)
    result = sweep(
        dataset=data,
        model_grid=cfg.model_grid,
        scenario=cfg.scenario,
        scenario_kinds=cfg.scenario_kinds,
        attack=cfg.attack,
        lambdas=cfg.lambdas,
        d_max_grid=cfg.d_max_grid,
        n_splits=cfg.n_splits,
        n_train=cfg.n_train,
        n_test=cfg.n_test,
        fp_target=cfg.fp_target,
        kde=cfg.kde,
        seed=cfg.seed,
        jobs=cfg.jobs,
    )
    _write_rows(
        out_dir / "results.csv",
        ["classifier", "scenario", "lambda", "split", "repeat", "d_max", "fn"],
        (
            [r["classifier"], r["scenario"], repr(r["lam"]), r["split"], r["repeat"], repr(r["d_max"]), repr(r["fn"])]
            for r in result.records
        ),
    )
    _write_rows(
        out_dir / "curves.csv",
        ["classifier", "scenario", "lambda", "d_max", "mean_fn", "std_fn"],
        (
            [c.classifier, c.scenario, repr(c.lam), repr(float(b)), repr(float(m)), repr(float(s))]
            for c in result.curves
            for b, m, s in zip(c.d_max, c.mean_fn, c.std_fn)
        ),
    )
    plots_dir = out_dir / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    for c in result.curves:
        _write_rows(
            plots_dir / f"curve_{c.slug()}.csv",
            ["d_max", "mean_fn", "yerr"],
            (
                [repr(float(b)), repr(float(m)), repr(float(s / 2.0))]
                for b, m, s in zip(c.d_max, c.mean_fn, c.std_fn)
            ),
        )
    for c in result.curves:
        tail = c.mean_fn[-1]
        print(f"curve {c.classifier} {c.scenario} lambda={c.lam:g}: FN({c.d_max[-1]:g}) = {tail:.3f}")
    if result.failures:
        with open(out_dir / "failures.json", "w") as fh:
            json.dump(result.failures, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for f in result.failures:
            print(f"FAILED cell {f['classifier']} split {f['split']}: {f['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_export_digits(trace_path: str, out_dir: Path) -> int:
    doc = read_trace(trace_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote = []
    for name, fname in (("x0", "start.pgm"), ("x_first_evading", "first_evading.pgm"), ("x_star", "final.pgm")):
        if name in doc["vectors"]:
            write_pgm(doc["vectors"][name], out_dir / fname)
            wrote.append(fname)
    if "x_first_evading" not in doc["vectors"]:
        print("notice: trace has no evading point; exported start and final images only")
    print(f"wrote {', '.join(wrote)} to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradevade", description="Evasion attacks and security curves.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key by dotted path")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (overrides config)")

    common(sub.add_parser("train", help="train the model grid over all splits"))

    p_attack = sub.add_parser("attack", help="attack one test sample with a saved model")
    common(p_attack)
    p_attack.add_argument("--model", required=True, help="model JSON file")
    p_attack.add_argument("--index", type=int, required=True, help="index into the split's malicious test samples")
    p_attack.add_argument("--split", type=int, default=0, help="split index (default 0)")
    p_attack.add_argument("--lam", type=float, default=None, help="mimicry weight (default: first of attack.lambdas)")
    p_attack.add_argument("--force", action="store_true", help="attack even if already misclassified")

    common(sub.add_parser("sweep", help="run the full security evaluation"))

    p_export = sub.add_parser("export-digits", help="render a trace's images as PGM files")
    p_export.add_argument("--trace", required=True, help="trace file from the attack command")
    p_export.add_argument("--out", required=True, help="output directory for the images")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "export-digits":
            return cmd_export_digits(args.trace, Path(args.out))
        cfg = load_config(args.config, args.overrides)
        if args.out is not None:
            cfg.output_dir = args.out
        if args.jobs is not None:
            cfg.jobs = args.jobs
        out_dir = Path(cfg.output_dir)
        if args.command == "train":
            return cmd_train(cfg, out_dir)
        if args.command == "attack":
            return cmd_attack(cfg, out_dir, args.model, args.index, args.split, args.lam, args.force)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
