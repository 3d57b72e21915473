"""Outer neuroevolution of the population encoder over a set of tasks.

Per generation, every sampled weight vector is scored by its mean relative
performance across all tasks (each score requires meta-training a fresh
policy with the candidate features, then testing it).  The N x K pipelines
are pure functions of (theta, task, derived seeds), so they can run in any
order or in parallel without changing results.  Baseline statistics are
meta-trained once per task and frozen; they do not depend on the candidate.

Every generation writes a resumable checkpoint; resuming reproduces the
uninterrupted run bit for bit because each generation's work depends only on
the evolution-strategy state and seeds derived from the generation index.
"""

from __future__ import annotations

import base64
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .analyzer import AnalyzerConfig, decode_params, param_count, save_checkpoint
from .errors import ConfigError, IntegrityError
from .es import EsConfig, es_init, es_sample, es_update, state_from_dict, state_to_dict
from .metabbo import (
    BaselineStats,
    NeuralExtractor,
    TaskSpec,
    UpsilonResult,
    compute_baseline,
    episode_return,
    make_instance,
    meta_train,
    policy_encode,
    policy_decode,
    relative_performance,
    run_episode,
    run_test_episodes,
    train_instance_schedule,
    upsilon_from_fstars,
)
from .utils import array_digest, derive_seed

TRAINER_CHECKPOINT_FORMAT = "popscape-trainer"
TRAINER_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainingRunConfig:
    tasks: tuple[TaskSpec, ...]
    analyzer: AnalyzerConfig = AnalyzerConfig()
    outer_variant: str = "fast_cmaes"
    outer_population: int = 10
    max_generations: int = 50
    initial_sigma: float = 0.3
    initial_mean_mode: str = "uniform_random"
    path_lr: Optional[float] = None
    q_runs: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise ConfigError("training needs at least one task")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate task ids: {ids}")

    def es_config(self) -> EsConfig:
        return EsConfig(
            variant=self.outer_variant,
            dim=param_count(self.analyzer),
            population=self.outer_population,
            initial_sigma=self.initial_sigma,
            initial_mean_mode=self.initial_mean_mode,
            path_lr=self.path_lr,
            seed=derive_seed(self.seed, "outer-es"),
        )

    def to_dict(self) -> dict:
        return {
            "tasks": [t.to_dict() for t in self.tasks],
            "analyzer": self.analyzer.to_dict(),
            "outer_variant": self.outer_variant,
            "outer_population": self.outer_population,
            "max_generations": self.max_generations,
            "initial_sigma": self.initial_sigma,
            "initial_mean_mode": self.initial_mean_mode,
            "path_lr": self.path_lr,
            "q_runs": self.q_runs,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingRunConfig":
        d = dict(d)
        d["tasks"] = tuple(TaskSpec.from_dict(t) for t in d["tasks"])
        d["analyzer"] = AnalyzerConfig.from_dict(d["analyzer"])
        return cls(**d)

    def digest(self) -> str:
        """Resume-compatibility key.

        Excludes max_generations: per-generation work only depends on the
        evolution-strategy state and seeds derived from the generation index,
        so a checkpoint may be resumed under a longer horizon.
        """
        d = self.to_dict()
        d.pop("max_generations")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# --- baselines ----------------------------------------------------------------


def compute_baselines(
    tasks, q_runs: int, seed: int, cache_path: Optional[Path] = None
) -> dict[str, BaselineStats]:
    """Baseline statistics per task, served from the cache when the key
    (task id, Q, seed base) already has an entry."""
    cache: dict[str, dict] = {}
    if cache_path is not None and Path(cache_path).exists():
        cache = json.loads(Path(cache_path).read_text())
    out: dict[str, BaselineStats] = {}
    dirty = False
    for task in tasks:
        seed_base = derive_seed(seed, "baseline")
        key = f"{task.id}|q{q_runs}|s{seed_base}"
        if key in cache:
            out[task.id] = BaselineStats.from_dict(cache[key])
            continue
        stats = compute_baseline(task, q_runs, seed_base)
        out[task.id] = stats
        cache[key] = stats.to_dict()
        dirty = True
    if cache_path is not None and dirty:
        Path(cache_path).write_text(json.dumps(cache, indent=1, sort_keys=True))
    return out


# --- fitness -------------------------------------------------------------------


def pipeline_score(
    theta: np.ndarray,
    analyzer_cfg: AnalyzerConfig,
    task: TaskSpec,
    baseline: BaselineStats,
    q_runs: int,
    seed_base: int,
) -> UpsilonResult:
    """Relative performance of one candidate on one task; pure and picklable."""
    extractor = NeuralExtractor(decode_params(theta, analyzer_cfg))
    return relative_performance(extractor, task, baseline, q_runs, seed_base)


def _pipeline_worker(payload) -> tuple[int, str, float, int, int]:
    cand_idx, theta, cfg_dict, task_dict, baseline_dict, q_runs, seed_base = payload
    result = pipeline_score(
        np.asarray(theta),
        AnalyzerConfig.from_dict(cfg_dict),
        TaskSpec.from_dict(task_dict),
        BaselineStats.from_dict(baseline_dict),
        q_runs,
        seed_base,
    )
    return cand_idx, task_dict["id"], result.value, result.fe_meta_train, result.fe_test


def fitness(
    theta: np.ndarray,
    tasks,
    baselines: dict[str, BaselineStats],
    q_runs: int,
    seed_base: int,
    analyzer_cfg: AnalyzerConfig,
) -> float:
    """Mean relative performance over the task space."""
    values = [
        pipeline_score(theta, analyzer_cfg, t, baselines[t.id], q_runs, seed_base).value
        for t in tasks
    ]
    return float(np.mean(values))


# --- training loop --------------------------------------------------------------


@dataclass
class GenerationRecord:
    generation: int
    fitness: list
    gen_best: float
    best_so_far: float
    best_digest: str
    fe_meta_train: int
    fe_test: int
    wall_time: float = 0.0

    def csv_row(self) -> str:
        fits = ",".join(repr(v) for v in self.fitness)
        return (
            f"{self.generation},{fits},{self.gen_best!r},{self.best_so_far!r},"
            f"{self.best_digest},{self.fe_meta_train},{self.fe_test}"
        )


@dataclass
class TrainResult:
    theta: np.ndarray
    fitness: float
    generation: int
    history: list
    outdir: Path


def _history_header(n: int) -> str:
    fits = ",".join(f"fit_{i}" for i in range(n))
    return f"generation,{fits},gen_best,best_so_far,best_digest,fe_meta_train,fe_test"


def _write_history(outdir: Path, records: list, n: int) -> None:
    lines = [_history_header(n)] + [r.csv_row() for r in records]
    (outdir / "history.csv").write_text("\n".join(lines) + "\n")
    timing = ["generation,seconds"] + [
        f"{r.generation},{r.wall_time:.3f}" for r in records
    ]
    (outdir / "timings.csv").write_text("\n".join(timing) + "\n")


def _checkpoint_path(outdir: Path, generation: int) -> Path:
    return outdir / "checkpoints" / f"gen_{generation:04d}.json"


def _save_trainer_checkpoint(outdir, run, state, best, records, generation) -> None:
    payload = {
        "format": TRAINER_CHECKPOINT_FORMAT,
        "version": TRAINER_CHECKPOINT_VERSION,
        "run_digest": run.digest(),
        "run": run.to_dict(),
        "generation": generation,
        "es_state": state_to_dict(state),
        "best": {
            "fitness": best["fitness"],
            "generation": best["generation"],
            "digest": best["digest"],
            "theta_b64": base64.b64encode(
                np.ascontiguousarray(best["theta"], dtype="<f8").tobytes()
            ).decode(),
        },
        "records": [
            {
                "generation": r.generation,
                "fitness": r.fitness,
                "gen_best": r.gen_best,
                "best_so_far": r.best_so_far,
                "best_digest": r.best_digest,
                "fe_meta_train": r.fe_meta_train,
                "fe_test": r.fe_test,
                "wall_time": r.wall_time,
            }
            for r in records
        ],
    }
    canonical = json.dumps(payload, sort_keys=True).encode()
    payload["sha256"] = hashlib.sha256(canonical).hexdigest()
    path = _checkpoint_path(outdir, generation)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True))


def load_trainer_checkpoint(path) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != TRAINER_CHECKPOINT_FORMAT:
        raise IntegrityError(f"{path} is not a trainer checkpoint")
    stored = payload.pop("sha256", None)
    canonical = json.dumps(payload, sort_keys=True).encode()
    if stored != hashlib.sha256(canonical).hexdigest():
        raise IntegrityError(f"checkpoint {path} failed its integrity check")
    return payload


def latest_checkpoint(outdir: Path) -> Optional[Path]:
    ckpt_dir = Path(outdir) / "checkpoints"
    if not ckpt_dir.exists():
        return None
    files = sorted(ckpt_dir.glob("gen_*.json"))
    return files[-1] if files else None


def train(
    run: TrainingRunConfig,
    outdir,
    jobs: int = 1,
    resume: bool = False,
) -> TrainResult:
    """Run (or resume) the outer neuroevolution loop.

    Writes per-generation checkpoints, a deterministic history CSV, a
    separate timing CSV, and the best weight vector as an analyzer
    checkpoint.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    baselines = compute_baselines(
        run.tasks, run.q_runs, run.seed, cache_path=outdir / "baselines.json"
    )

    records: list[GenerationRecord] = []
    if resume:
        ckpt_file = latest_checkpoint(outdir)
        if ckpt_file is None:
            raise ConfigError(f"nothing to resume in {outdir}")
        payload = load_trainer_checkpoint(ckpt_file)
        if payload["run_digest"] != run.digest():
            raise ConfigError(
                "checkpoint was produced by a different run configuration"
            )
        state = state_from_dict(payload["es_state"])
        best = {
            "fitness": payload["best"]["fitness"],
            "generation": payload["best"]["generation"],
            "digest": payload["best"]["digest"],
            "theta": np.frombuffer(
                base64.b64decode(payload["best"]["theta_b64"]), dtype="<f8"
            ).copy(),
        }
        records = [GenerationRecord(**r) for r in payload["records"]]
        start_gen = payload["generation"] + 1
    else:
        state = es_init(run.es_config())
        best = {"fitness": -np.inf, "generation": -1, "digest": "", "theta": state.mean}
        start_gen = 0

    n = run.outer_population
    for gen in range(start_gen, run.max_generations):
        t0 = time.perf_counter()
        candidates = es_sample(state, n)
        units = []
        for i in range(n):
            seed_base = derive_seed(run.seed, "fitness", gen, i)
            for task in run.tasks:
                units.append(
                    (
                        i,
                        candidates[i],
                        run.analyzer.to_dict(),
                        task.to_dict(),
                        baselines[task.id].to_dict(),
                        run.q_runs,
                        seed_base,
                    )
                )
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_pipeline_worker, units))
        else:
            results = [_pipeline_worker(u) for u in units]

        per_cand = {i: {} for i in range(n)}
        fe_meta = fe_test = 0
        for cand_idx, task_id, value, fe_mt, fe_te in results:
            per_cand[cand_idx][task_id] = value
            fe_meta += fe_mt
            fe_test += fe_te
        task_order = [t.id for t in run.tasks]
        fits = np.array(
            [np.mean([per_cand[i][tid] for tid in task_order]) for i in range(n)]
        )
        top = int(np.argmax(fits))
        if fits[top] > best["fitness"]:
            best = {
                "fitness": float(fits[top]),
                "generation": gen,
                "digest": array_digest(candidates[top]),
                "theta": candidates[top].copy(),
            }
        es_update(state, candidates, fits)
        record = GenerationRecord(
            generation=gen,
            fitness=[float(v) for v in fits],
            gen_best=float(fits[top]),
            best_so_far=best["fitness"],
            best_digest=best["digest"],
            fe_meta_train=fe_meta,
            fe_test=fe_test,
            wall_time=time.perf_counter() - t0,
        )
        records.append(record)
        _save_trainer_checkpoint(outdir, run, state, best, records, gen)
        _write_history(outdir, records, n)

    save_checkpoint(
        outdir / "analyzer_best.json",
        run.analyzer,
        best["theta"],
        provenance={
            "generation": best["generation"],
            "seed": run.seed,
            "fitness": best["fitness"],
        },
    )
    return TrainResult(
        theta=best["theta"],
        fitness=best["fitness"],
        generation=len(records),
        history=records,
        outdir=outdir,
    )


# --- zero-shot and fine-tuning workflows -----------------------------------------


@dataclass
class EvaluationReport:
    mode: str
    upsilon: float
    per_problem: dict
    z_table: dict
    trajectory: list = field(default_factory=list)  # (epoch, upsilon, best_so_far)


def zero_shot(
    theta: np.ndarray,
    analyzer_cfg: AnalyzerConfig,
    task: TaskSpec,
    q_runs: int,
    seed: int,
    baseline: Optional[BaselineStats] = None,
) -> EvaluationReport:
    """Freeze the encoder weights; meta-train only the policy and score it."""
    seed_base = derive_seed(seed, "evaluate")
    if baseline is None:
        baseline = compute_baseline(task, q_runs, derive_seed(seed, "baseline"))
    extractor = NeuralExtractor(decode_params(theta, analyzer_cfg))
    ups = relative_performance(extractor, task, baseline, q_runs, seed_base)
    return EvaluationReport(
        mode="zero_shot",
        upsilon=ups.value,
        per_problem=ups.per_problem,
        z_table=ups.z_table,
    )


def fine_tune(
    theta: np.ndarray,
    analyzer_cfg: AnalyzerConfig,
    task: TaskSpec,
    q_runs: int,
    seed: int,
    epochs: int = 5,
    population: int = 6,
    sigma: float = 0.1,
    baseline: Optional[BaselineStats] = None,
) -> EvaluationReport:
    """Co-evolve the concatenated (encoder, policy) vector from the trained
    encoder and its zero-shot policy; epoch 0 is the zero-shot result."""
    seed_base = derive_seed(seed, "evaluate")
    if baseline is None:
        baseline = compute_baseline(task, q_runs, derive_seed(seed, "baseline"))
    extractor0 = NeuralExtractor(decode_params(theta, analyzer_cfg))
    trained = meta_train(
        task, extractor0, seed=derive_seed(seed_base, task.id, "metatrain")
    )
    fstars0 = run_test_episodes(task, extractor0, trained.policy, q_runs, seed_base)
    ups0, per_problem, z_table = upsilon_from_fstars(task, baseline, fstars0)

    theta = np.asarray(theta, dtype=float)
    phi0 = policy_encode(trained.policy)
    joint0 = np.concatenate([theta, phi0])
    n_theta = theta.shape[0]
    template = task.template()
    es_cfg = EsConfig(
        variant="fast_cmaes",
        dim=joint0.shape[0],
        population=population,
        initial_sigma=sigma,
        seed=derive_seed(seed, task.id, "finetune-es"),
    )
    state = es_init(es_cfg, mean=joint0)
    trajectory = [(0, ups0, ups0)]
    best_ups = ups0
    ft_seed = derive_seed(seed, task.id, "finetune")
    for epoch in range(1, epochs + 1):
        candidates = es_sample(state)
        picks = train_instance_schedule(task, ft_seed, epoch)
        returns = np.empty(population)
        for i, joint in enumerate(candidates):
            ext = NeuralExtractor(decode_params(joint[:n_theta], analyzer_cfg))
            pol = policy_decode(joint[n_theta:], template, ext.width)
            total = 0.0
            for fid, inst_seed, ep_seed in picks:
                problem = make_instance(task, fid, inst_seed)
                total += episode_return(run_episode(task, ext, pol, problem, ep_seed))
            returns[i] = total / len(picks)
        top = int(np.argmax(returns))
        ext = NeuralExtractor(
            decode_params(candidates[top][:n_theta], analyzer_cfg)
        )
        pol = policy_decode(candidates[top][n_theta:], template, ext.width)
        fstars = run_test_episodes(task, ext, pol, q_runs, seed_base)
        ups_e, pp_e, zt_e = upsilon_from_fstars(task, baseline, fstars)
        if ups_e > best_ups:
            best_ups = ups_e
            per_problem, z_table = pp_e, zt_e
        trajectory.append((epoch, ups_e, best_ups))
        es_update(state, candidates, returns)
    return EvaluationReport(
        mode="fine_tune",
        upsilon=best_ups,
        per_problem=per_problem,
        z_table=z_table,
        trajectory=trajectory,
    )
