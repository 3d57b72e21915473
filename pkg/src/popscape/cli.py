"""Command-line entry point.

Subcommands: ``train`` (outer neuroevolution from a config file),
``evaluate`` (zero-shot or fine-tuning of a trained checkpoint on a task),
``extract`` (features from an observation file), ``bench`` (wall-time
grid), and ``analyze`` (exploration/exploitation clouds or feature
correlation).  Exit codes: 0 success, 2 configuration error, 3 runtime
error, 4 integrity error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .analyzer import AnalyzerConfig, Observation, load_checkpoint
from .analysis import (
    BENCH_EXTRACTORS,
    bench_grid,
    correlation_to_csv,
    exploration_study,
    pearson_matrix,
    point_cloud_csv,
    strong_pairs,
    timings_to_csv,
    timings_to_table_csv,
)
from .ela import ELA_FEATURE_NAMES, HANDCRAFTED_NAMES, RunContext, features_to_csv
from .errors import ConfigError, IntegrityError
from .metabbo import TaskSpec, make_slot_extractor
from .trainer import TrainingRunConfig, fine_tune, train, zero_shot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_INTEGRITY = 4

OUTPUT_ROOT_ENV = "POPSCAPE_OUT"


# --- config loading and validation ---------------------------------------------

_TASK_SCHEMA = {
    "id": (str, True),
    "optimizer": (str, True),
    "dimension": (int, True),
    "train_functions": (list, True),
    "test_functions": (list, True),
    "population_size": (int, False),
    "budget": (int, False),
    "noise": (dict, False),
    "analyzer_slot": (str, False),
    "policy_hidden": (int, False),
    "inner_variant": (str, False),
    "inner_population": (int, False),
    "inner_epochs": (int, False),
    "episodes_per_eval": (int, False),
}

_OUTER_SCHEMA = {
    "variant": (str, False),
    "population": (int, False),
    "max_generations": (int, False),
    "initial_sigma": (float, False),
    "initial_mean_mode": (str, False),
    "path_lr": (float, False),
}

_TRAIN_SCHEMA = {
    "seed": (int, False),
    "q_runs": (int, False),
    "analyzer": (dict, False),
    "outer": (dict, False),
    "tasks": (list, True),
}

_ANALYZER_SCHEMA = {
    "hidden_dim": (int, False),
    "num_heads": (int, False),
    "num_layers": (int, False),
    "ff_inner_dim": (int, False),
}

_NOISE_SCHEMA = {"kind": (str, True), "level": (float, True)}


def _check_keys(data: dict, schema: dict, path: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    for key in data:
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown field")
    for key, (kind, required) in schema.items():
        if key not in data:
            if required:
                raise ConfigError(f"{path}.{key}: required field missing")
            continue
        value = data[key]
        if value is None and not required:
            continue
        if kind is float and isinstance(value, int):
            continue
        if not isinstance(value, kind):
            raise ConfigError(
                f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}"
            )


def load_train_config(path) -> TrainingRunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    _check_keys(data, _TRAIN_SCHEMA, "config")
    for i, task in enumerate(data.get("tasks", [])):
        _check_keys(task, _TASK_SCHEMA, f"config.tasks[{i}]")
        if task.get("noise") is not None:
            _check_keys(task["noise"], _NOISE_SCHEMA, f"config.tasks[{i}].noise")
    if "analyzer" in data and data["analyzer"] is not None:
        _check_keys(data["analyzer"], _ANALYZER_SCHEMA, "config.analyzer")
    if "outer" in data and data["outer"] is not None:
        _check_keys(data["outer"], _OUTER_SCHEMA, "config.outer")
    outer = data.get("outer") or {}
    return TrainingRunConfig(
        tasks=tuple(TaskSpec.from_dict(t) for t in data["tasks"]),
        analyzer=AnalyzerConfig.from_dict(data.get("analyzer") or {}),
        outer_variant=outer.get("variant", "fast_cmaes"),
        outer_population=outer.get("population", 10),
        max_generations=outer.get("max_generations", 50),
        initial_sigma=outer.get("initial_sigma", 0.3),
        initial_mean_mode=outer.get("initial_mean_mode", "uniform_random"),
        path_lr=outer.get("path_lr"),
        q_runs=data.get("q_runs", 5),
        seed=data.get("seed", 0),
    )


def load_task_config(path) -> TaskSpec:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read task config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    _check_keys(data, _TASK_SCHEMA, "task")
    if data.get("noise") is not None:
        _check_keys(data["noise"], _NOISE_SCHEMA, "task.noise")
    return TaskSpec.from_dict(data)


# --- observation file format -----------------------------------------------------


def parse_observation_file(path) -> list[Observation]:
    """Observation CSV: a ``# d=.. lb=.. ub=..`` header line, then columns
    obs,x_1..x_d,y.  Rows sharing an obs id form one population."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not lines or not lines[0].startswith("#"):
        raise ConfigError(f"{path}: line 1: expected '# d=.. lb=.. ub=..' header")
    meta = {}
    for token in lines[0][1:].split():
        if "=" not in token:
            raise ConfigError(f"{path}: line 1: malformed token {token!r}")
        key, val = token.split("=", 1)
        meta[key] = val
    try:
        d = int(meta["d"])
        lb = np.array([float(v) for v in meta["lb"].split(",")])
        ub = np.array([float(v) for v in meta["ub"].split(",")])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: line 1: bad header ({exc})") from exc
    if lb.size == 1:
        lb = np.full(d, lb[0])
    if ub.size == 1:
        ub = np.full(d, ub[0])
    expected_cols = ["obs"] + [f"x_{j}" for j in range(1, d + 1)] + ["y"]
    if len(lines) < 2 or lines[1].split(",") != expected_cols:
        raise ConfigError(
            f"{path}: line 2: expected header {','.join(expected_cols)}"
        )
    groups: dict[int, list[list[float]]] = {}
    order: list[int] = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != d + 2:
            raise ConfigError(f"{path}: line {lineno}: expected {d + 2} columns")
        try:
            obs_id = int(cells[0])
            values = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise ConfigError(f"{path}: line {lineno}: {exc}") from exc
        if obs_id not in groups:
            groups[obs_id] = []
            order.append(obs_id)
        groups[obs_id].append(values)
    observations = []
    for obs_id in order:
        rows = np.asarray(groups[obs_id])
        observations.append(
            Observation(X=rows[:, :d], y=rows[:, d], lb=lb, ub=ub)
        )
    return observations


def write_observation_file(path, observations, lb, ub) -> None:
    d = observations[0].dimension if observations else len(np.atleast_1d(lb))
    lb = np.broadcast_to(np.asarray(lb, dtype=float), (d,))
    ub = np.broadcast_to(np.asarray(ub, dtype=float), (d,))
    lines = [
        "# d=%d lb=%s ub=%s"
        % (
            d,
            ",".join(repr(float(v)) for v in lb),
            ",".join(repr(float(v)) for v in ub),
        ),
        ",".join(["obs"] + [f"x_{j}" for j in range(1, d + 1)] + ["y"]),
    ]
    for i, obs in enumerate(observations):
        for row, y in zip(obs.X, obs.y):
            cells = [str(i)] + [repr(float(v)) for v in row] + [repr(float(y))]
            lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


# --- commands ---------------------------------------------------------------------


def _run_directory(args, seed: int) -> Path:
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        root = Path(args.outdir or os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = root / f"run-{stamp}-seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def cmd_train(args) -> int:
    run = load_train_config(args.config)
    if args.resume:
        run_dir = Path(args.resume)
        if not run_dir.exists():
            raise ConfigError(f"resume directory {run_dir} does not exist")
    else:
        run_dir = _run_directory(args, run.seed)
    (run_dir / "config.json").write_text(
        json.dumps(run.to_dict(), indent=1, sort_keys=True)
    )
    result = train(run, run_dir, jobs=args.jobs, resume=bool(args.resume))
    print(f"run directory: {result.outdir}")
    print(f"best fitness {result.fitness:.6f} at generation {result.generation}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config, theta, provenance = load_checkpoint(args.checkpoint)
    task = load_task_config(args.task)
    if args.mode == "zero_shot":
        report = zero_shot(theta, config, task, args.q, args.seed)
    else:
        report = fine_tune(
            theta, config, task, args.q, args.seed, epochs=args.epochs
        )
    payload = {
        "mode": report.mode,
        "task": task.id,
        "upsilon": report.upsilon,
        "per_problem": {str(k): v for k, v in report.per_problem.items()},
        "z_table": {str(k): v for k, v in report.z_table.items()},
        "trajectory": [
            {"epoch": e, "upsilon": u, "best_so_far": b}
            for e, u, b in report.trajectory
        ],
        "checkpoint_provenance": provenance,
    }
    text = json.dumps(payload, indent=1, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text)
    print(text)
    return EXIT_OK


def cmd_extract(args) -> int:
    observations = parse_observation_file(args.input)
    if args.extractor == "ela":
        extractor = make_slot_extractor("ela")
        names = ELA_FEATURE_NAMES
    elif args.extractor == "handcrafted":
        extractor = make_slot_extractor("handcrafted")
        names = HANDCRAFTED_NAMES
    else:
        config, theta, _ = load_checkpoint(args.extractor)
        extractor = make_slot_extractor("neural", theta, config)
        names = tuple(f"nf_{i}" for i in range(config.hidden_dim))
    rows = []
    for obs in observations:
        ctx = RunContext(
            obs=obs,
            t=1,
            horizon=2,
            best_so_far=float(obs.y.min()),
            prev_best=float(obs.y.min()),
            worst_so_far=float(obs.y.max()),
            steps_since_improvement=0,
        )
        _, pop = extractor.extract(obs, ctx)
        rows.append({name: float(v) for name, v in zip(names, pop)})
    Path(args.output).write_text(features_to_csv(rows, names))
    print(f"wrote {len(rows)} feature rows to {args.output}")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        grid = json.loads(Path(args.grid).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read grid config {args.grid}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.grid}: line {exc.lineno}: {exc.msg}") from exc
    _check_keys(
        grid,
        {
            "cells": (list, True),
            "runs": (int, False),
            "kinds": (list, False),
            "checkpoint": (str, False),
            "seed": (int, False),
        },
        "grid",
    )
    cells = [tuple(c) for c in grid["cells"]]
    theta = cfg = None
    if grid.get("checkpoint"):
        cfg, theta, _ = load_checkpoint(grid["checkpoint"])
    rows = bench_grid(
        cells=cells,
        runs=grid.get("runs", 10),
        kinds=tuple(grid.get("kinds", BENCH_EXTRACTORS)),
        analyzer_cfg=cfg,
        theta=theta,
        seed=grid.get("seed", 0),
    )
    out = Path(args.output)
    out.write_text(timings_to_table_csv(rows))
    detail = out.with_name(out.stem + "_detail.csv")
    detail.write_text(timings_to_csv(rows))
    print(f"wrote timing table to {out} (per-run detail in {detail})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        inputs = json.loads(Path(args.inputs).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read inputs {args.inputs}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.inputs}: line {exc.lineno}: {exc.msg}") from exc
    _check_keys(
        inputs,
        {
            "checkpoint": (str, True),
            "task": (str, True),
            "function_id": (int, True),
            "runs": (int, False),
            "seed": (int, False),
        },
        "inputs",
    )
    config, theta, _ = load_checkpoint(inputs["checkpoint"])
    task = load_task_config(inputs["task"])
    study = exploration_study(
        task,
        theta,
        config,
        function_id=inputs["function_id"],
        runs=inputs.get("runs", 3),
        seed=inputs.get("seed", 0),
    )
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.kind == "rq3":
        (outdir / "neural_points.csv").write_text(
            point_cloud_csv(study.neural_projection, study.labels)
        )
        (outdir / "ela_points.csv").write_text(
            point_cloud_csv(study.ela_projection, study.labels)
        )
        print(f"wrote labeled point clouds to {outdir}")
    else:
        matrix = pearson_matrix(study.ela, study.neural)
        (outdir / "correlation.csv").write_text(correlation_to_csv(matrix))
        counts_lines = ["feature," + ",".join(matrix.col_names)]
        for name, row in zip(matrix.row_names, matrix.counts):
            counts_lines.append(name + "," + ",".join(str(int(c)) for c in row))
        (outdir / "correlation_counts.csv").write_text(
            "\n".join(counts_lines) + "\n"
        )
        strong = strong_pairs(matrix)
        print(
            f"wrote correlation matrix to {outdir} "
            f"({len(strong)} strongly correlated pairs at |r| >= 0.6)"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popscape",
        description="Learned landscape features for meta-black-box optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the outer neuroevolution loop")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="existing run directory")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--outdir", default=None, help="output root (default $%s or ./runs)" % OUTPUT_ROOT_ENV)
    p.add_argument("--run-dir", default=None, help="exact run directory (overrides --outdir)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="zero-shot or fine-tune a checkpoint on a task")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--mode", choices=("zero_shot", "fine_tune"), required=True)
    p.add_argument("--q", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("extract", help="features from an observation file")
    p.add_argument(
        "--extractor",
        required=True,
        help="checkpoint path, or one of: ela, handcrafted",
    )
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("bench", help="wall-time benchmark over an (m, d) grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("analyze", help="exploration study or feature correlation")
    p.add_argument("--kind", choices=("rq3", "correlation"), required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(fn=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except Exception as exc:  # noqa: BLE001 - boundary of the CLI
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
