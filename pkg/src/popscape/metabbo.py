"""Bi-level tasks: a meta-policy reads landscape features and configures a
low-level optimizer, step by step, over a problem set.

A task pairs an optimizer kind (DE or PSO) with train/test function sets and
budgets.  The policy is a two-layer tanh perceptron whose outputs are
squashed into each control parameter's range.  Policies are meta-trained by
an inner evolution strategy on the episode return (sum of per-step
normalized improvements), and a candidate feature extractor is scored by the
relative-performance metric: the mean z-score of its final objective values
against cached baseline statistics, averaged over test problems and repeated
runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analyzer import Observation, PopulationEncoder
from .ela import (
    ELA_FEATURE_NAMES,
    HANDCRAFTED_NAMES,
    RunContext,
    ela_features,
    handcrafted_state,
    impute_missing,
)
from .errors import ConfigError
from .es import EsConfig, es_init, es_sample, es_update
from .optimizers import DeConfig, OptimizerState, PsoConfig, de_step, init_state, pso_step
from .problems import NoiseModel, Problem, ProblemSpec, make_problem, sample_offset
from .utils import array_digest, derive_seed

Z_CAP = 10.0
SIGMA_FLOOR = 1e-12

ANALYZER_SLOTS = ("neural", "ela", "handcrafted")


# --- feature extractors -------------------------------------------------------


class NeuralExtractor:
    """Wraps a decoded population encoder; per-candidate and pooled features."""

    name = "neural"

    def __init__(self, net: PopulationEncoder):
        self.net = net
        self.width = net.config.hidden_dim

    def extract(self, obs: Observation, ctx: Optional[RunContext] = None):
        fs = self.net.features(obs)
        return fs.per_candidate, fs.population


class ElaExtractor:
    """Classical in-run feature concatenation; population-level only."""

    name = "ela"
    width = len(ELA_FEATURE_NAMES)

    def extract(self, obs: Observation, ctx: Optional[RunContext] = None):
        pop = impute_missing(
            ela_features(obs.X, obs.y, obs.lb, obs.ub), ELA_FEATURE_NAMES
        )
        return None, pop


class HandcraftedExtractor:
    """Eight bounded optimization-state features; population-level only."""

    name = "handcrafted"
    width = len(HANDCRAFTED_NAMES)

    def extract(self, obs: Observation, ctx: RunContext):
        if ctx is None:
            raise ConfigError("handcrafted features need the run context")
        return None, handcrafted_state(ctx)


def make_slot_extractor(slot: str, theta=None, analyzer_cfg=None):
    """Extractor for an analyzer slot; the neural slot needs decoded weights."""
    if slot == "neural":
        if theta is None or analyzer_cfg is None:
            raise ConfigError("the neural slot needs weights and an analyzer config")
        from .analyzer import decode_params

        return NeuralExtractor(decode_params(theta, analyzer_cfg))
    if slot == "ela":
        return ElaExtractor()
    if slot == "handcrafted":
        return HandcraftedExtractor()
    raise ConfigError(f"unknown analyzer slot {slot!r}; one of {ANALYZER_SLOTS}")


# --- meta-policy ---------------------------------------------------------------


@dataclass(frozen=True)
class PolicyTemplate:
    feature_mode: str  # "per_individual" or "population"
    outputs: tuple[tuple[str, float, float], ...]  # (name, low, high)
    hidden: int = 32


def policy_template_for(optimizer: str, hidden: int = 32) -> PolicyTemplate:
    if optimizer == "de":
        return PolicyTemplate(
            feature_mode="per_individual",
            outputs=(("mutation_factor", 0.0, 1.0), ("crossover_rate", 0.0, 1.0)),
            hidden=hidden,
        )
    if optimizer == "pso":
        return PolicyTemplate(
            feature_mode="population",
            outputs=(("inertia", 0.0, 1.0), ("cognitive", 0.0, 2.0), ("social", 0.0, 2.0)),
            hidden=hidden,
        )
    raise ConfigError(f"unknown optimizer kind {optimizer!r}")


def policy_param_count(template: PolicyTemplate, in_width: int) -> int:
    k = len(template.outputs)
    return in_width * template.hidden + template.hidden + template.hidden * k + k


@dataclass
class MetaPolicy:
    """Two-layer perceptron with tanh hidden units and sigmoid-squashed
    outputs mapped into each control parameter's range."""

    template: PolicyTemplate
    in_width: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def raw_outputs(self, features: np.ndarray) -> np.ndarray:
        hidden = np.tanh(features @ self.w1 + self.b1)
        logits = hidden @ self.w2 + self.b2
        squashed = np.where(
            logits >= 0,
            1.0 / (1.0 + np.exp(-np.abs(logits))),
            np.exp(-np.abs(logits)) / (1.0 + np.exp(-np.abs(logits))),
        )
        lows = np.array([lo for _, lo, _ in self.template.outputs])
        highs = np.array([hi for _, _, hi in self.template.outputs])
        return lows + (highs - lows) * squashed


def policy_decode(vector: np.ndarray, template: PolicyTemplate, in_width: int) -> MetaPolicy:
    vector = np.asarray(vector, dtype=float).reshape(-1)
    expected = policy_param_count(template, in_width)
    if vector.shape[0] != expected:
        raise ConfigError(
            f"policy vector has length {vector.shape[0]}, expected {expected} "
            f"for feature width {in_width}"
        )
    h, k = template.hidden, len(template.outputs)
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        out = vector[pos : pos + n].reshape(shape).copy()
        pos += n
        return out

    return MetaPolicy(
        template=template,
        in_width=in_width,
        w1=take((in_width, h)),
        b1=take((h,)),
        w2=take((h, k)),
        b2=take((k,)),
    )


def policy_encode(policy: MetaPolicy) -> np.ndarray:
    return np.concatenate(
        [policy.w1.ravel(), policy.b1.ravel(), policy.w2.ravel(), policy.b2.ravel()]
    )


# --- tasks ---------------------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    """One meta-optimization task: optimizer kind, problem split, budgets."""

    id: str
    optimizer: str  # "de" or "pso"
    dimension: int
    train_functions: tuple[int, ...]
    test_functions: tuple[int, ...]
    population_size: int = 50
    budget: int = 2000  # step-evaluation budget; horizon = budget // population
    noise: Optional[NoiseModel] = None
    analyzer_slot: str = "neural"
    policy_hidden: int = 32
    inner_variant: str = "sep_cmaes"
    inner_population: int = 6
    inner_epochs: int = 3
    episodes_per_eval: int = 1

    def __post_init__(self):
        object.__setattr__(self, "train_functions", tuple(self.train_functions))
        object.__setattr__(self, "test_functions", tuple(self.test_functions))
        if self.optimizer not in ("de", "pso"):
            raise ConfigError(f"unknown optimizer kind {self.optimizer!r}")
        if self.analyzer_slot not in ANALYZER_SLOTS:
            raise ConfigError(
                f"unknown analyzer slot {self.analyzer_slot!r}; one of {ANALYZER_SLOTS}"
            )
        if not self.train_functions:
            raise ConfigError(f"task {self.id}: empty train set")
        overlap = set(self.train_functions) & set(self.test_functions)
        if overlap:
            raise ConfigError(
                f"task {self.id}: train and test sets overlap on {sorted(overlap)}"
            )
        if self.budget < self.population_size:
            raise ConfigError(f"task {self.id}: budget smaller than one step")

    @property
    def horizon(self) -> int:
        return self.budget // self.population_size

    def template(self) -> PolicyTemplate:
        return policy_template_for(self.optimizer, self.policy_hidden)

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "optimizer": self.optimizer,
            "dimension": self.dimension,
            "train_functions": list(self.train_functions),
            "test_functions": list(self.test_functions),
            "population_size": self.population_size,
            "budget": self.budget,
            "noise": None
            if self.noise is None
            else {"kind": self.noise.kind.value, "level": self.noise.level},
            "analyzer_slot": self.analyzer_slot,
            "policy_hidden": self.policy_hidden,
            "inner_variant": self.inner_variant,
            "inner_population": self.inner_population,
            "inner_epochs": self.inner_epochs,
            "episodes_per_eval": self.episodes_per_eval,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        noise = d.get("noise")
        if noise is not None:
            d["noise"] = NoiseModel(kind=noise["kind"], level=noise["level"])
        return cls(**d)


def task_extractor(task: TaskSpec, theta=None, analyzer_cfg=None):
    """The extractor the task's analyzer slot is configured to run with."""
    return make_slot_extractor(task.analyzer_slot, theta, analyzer_cfg)


def make_instance(task: TaskSpec, function_id: int, instance_seed: int) -> Problem:
    """Problem instance with a derived random offset and noise stream."""
    offset_rng = np.random.Generator(
        np.random.PCG64(derive_seed(instance_seed, "offset"))
    )
    offset = sample_offset(function_id, task.dimension, offset_rng)
    spec = ProblemSpec(
        function_id=function_id,
        dimension=task.dimension,
        offset=offset,
        noise=task.noise,
        seed=derive_seed(instance_seed, "noise"),
    )
    return make_problem(spec)


# --- episode rollout -----------------------------------------------------------


@dataclass
class StepRecord:
    digest: str
    config: dict
    reward: float


@dataclass
class EpisodeResult:
    f_star: float
    fe_used: int
    steps: list = field(default_factory=list)


def _policy_config(
    task: TaskSpec, policy: MetaPolicy, per: Optional[np.ndarray], pop: np.ndarray, m: int
):
    """Map extracted features to an optimizer config via the policy.

    Extractors without per-candidate features broadcast the population
    feature, which collapses per-individual control to a uniform setting.
    """
    if policy.template.feature_mode == "per_individual":
        feats = per if per is not None else np.tile(pop, (m, 1))
    else:
        feats = pop[None, :]
    out = policy.raw_outputs(feats)
    if task.optimizer == "de":
        if out.shape[0] == 1:
            out = np.tile(out, (m, 1))
        return DeConfig(F=out[:, 0], Cr=out[:, 1]), {
            "F_mean": float(out[:, 0].mean()),
            "Cr_mean": float(out[:, 1].mean()),
        }
    scalars = out[0]
    cfg = PsoConfig(inertia=scalars[0], cognitive=scalars[1], social=scalars[2])
    return cfg, {"inertia": cfg.inertia, "cognitive": cfg.cognitive, "social": cfg.social}


def run_episode(
    task: TaskSpec,
    extractor,
    policy: MetaPolicy,
    problem: Problem,
    seed: int,
    on_step=None,
) -> EpisodeResult:
    """One full rollout: observe, extract features, decide, step, reward.

    The initial population evaluation is bookkept outside the step budget:
    the budget governs policy-controlled steps, so the horizon is exactly
    budget // population_size decisions.  The per-step reward is the
    improvement of the best-so-far objective normalized by the initial best
    magnitude, floored at zero.
    """
    if policy.in_width != extractor.width:
        raise ConfigError(
            f"policy expects feature width {policy.in_width}, extractor "
            f"{extractor.name!r} produces {extractor.width}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    m = task.population_size
    state: OptimizerState = init_state(problem, m, rng)
    best0 = state.best_y
    denom = max(abs(best0), 1e-12)
    worst_so_far = float(np.max(state.y))
    prev_best = state.best_y
    steps_since_improvement = 0
    result = EpisodeResult(f_star=state.best_y, fe_used=0)
    for t in range(task.horizon):
        obs = Observation(
            X=state.X.copy(), y=state.y.copy(), lb=problem.lower, ub=problem.upper
        )
        ctx = RunContext(
            obs=obs,
            t=t,
            horizon=task.horizon,
            best_so_far=state.best_y,
            prev_best=prev_best,
            worst_so_far=worst_so_far,
            steps_since_improvement=steps_since_improvement,
        )
        per, pop = extractor.extract(obs, ctx)
        cfg, cfg_summary = _policy_config(task, policy, per, pop, m)
        if on_step is not None:
            on_step(t, obs, ctx, cfg_summary)
        before = state.best_y
        if task.optimizer == "de":
            de_step(state, cfg, problem, rng)
        else:
            pso_step(state, cfg, problem, rng)
        reward = max(0.0, (before - state.best_y) / denom)
        worst_so_far = max(worst_so_far, float(np.max(state.y)))
        steps_since_improvement = (
            0 if state.best_y < before else steps_since_improvement + 1
        )
        prev_best = before
        result.fe_used += m
        result.steps.append(
            StepRecord(digest=array_digest(state.X), config=cfg_summary, reward=reward)
        )
    result.f_star = state.best_y
    return result


def episode_return(result: EpisodeResult) -> float:
    return float(sum(s.reward for s in result.steps))


# --- meta-training -------------------------------------------------------------


@dataclass
class MetaTrainResult:
    policy: MetaPolicy
    best_return: float
    fe_used: int
    history: list  # (epoch, best return so far)


def train_instance_schedule(task: TaskSpec, seed_base: int, epoch: int):
    """Deterministic per-epoch schedule of train problems and episode seeds."""
    picks = []
    for e in range(task.episodes_per_eval):
        idx = (epoch * task.episodes_per_eval + e) % len(task.train_functions)
        fid = task.train_functions[idx]
        inst_seed = derive_seed(seed_base, "train-instance", epoch, e)
        ep_seed = derive_seed(seed_base, "train-episode", epoch, e)
        picks.append((fid, inst_seed, ep_seed))
    return picks


def meta_train(
    task: TaskSpec,
    extractor,
    seed: int,
    epochs: Optional[int] = None,
) -> MetaTrainResult:
    """Optimize the policy by an inner evolution strategy on episode returns.

    Deterministic given (task, extractor, seed).  Returns the best policy
    seen across all evaluated candidates, generation zero included.
    """
    template = task.template()
    n_params = policy_param_count(template, extractor.width)
    epochs = task.inner_epochs if epochs is None else epochs
    inner_cfg = EsConfig(
        variant=task.inner_variant,
        dim=n_params,
        population=task.inner_population,
        initial_sigma=0.3,
        initial_mean_mode="zero",
        seed=derive_seed(seed, "inner-es"),
    )
    state = es_init(inner_cfg)
    best_vec = state.mean.copy()
    best_return = -np.inf
    fe_used = 0
    history = []
    for epoch in range(epochs):
        candidates = es_sample(state)
        picks = train_instance_schedule(task, seed, epoch)
        returns = np.empty(inner_cfg.population)
        for i, vec in enumerate(candidates):
            policy = policy_decode(vec, template, extractor.width)
            total = 0.0
            for fid, inst_seed, ep_seed in picks:
                problem = make_instance(task, fid, inst_seed)
                ep = run_episode(task, extractor, policy, problem, ep_seed)
                total += episode_return(ep)
                fe_used += ep.fe_used
            returns[i] = total / len(picks)
        top = int(np.argmax(returns))
        if returns[top] > best_return:
            best_return = float(returns[top])
            best_vec = candidates[top].copy()
        es_update(state, candidates, returns)
        history.append((epoch, best_return))
    policy = policy_decode(best_vec, template, extractor.width)
    return MetaTrainResult(
        policy=policy, best_return=best_return, fe_used=fe_used, history=history
    )


# --- relative performance -------------------------------------------------------


@dataclass(frozen=True)
class BaselineStats:
    """Cached per-problem mean/std of the baseline pipeline's final values."""

    task_id: str
    q_runs: int
    seed_base: int
    stats: dict  # function id -> (mu, sigma)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "q_runs": self.q_runs,
            "seed_base": self.seed_base,
            "stats": {str(fid): [mu, sigma] for fid, (mu, sigma) in self.stats.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineStats":
        return cls(
            task_id=d["task_id"],
            q_runs=d["q_runs"],
            seed_base=d["seed_base"],
            stats={int(fid): (v[0], v[1]) for fid, v in d["stats"].items()},
        )


def z_score(f_star: float, mu_p: float, sigma_p: float) -> float:
    """Negated, baseline-normalized gap: -(f* - mu) / sigma.

    A near-zero sigma (deterministic baseline) caps the score at +-Z_CAP, or
    0 when f* coincides with the baseline mean.
    """
    if sigma_p < SIGMA_FLOOR:
        if abs(f_star - mu_p) < SIGMA_FLOOR:
            return 0.0
        return float(np.sign(mu_p - f_star) * Z_CAP)
    return -(f_star - mu_p) / sigma_p


def run_test_episodes(
    task: TaskSpec, extractor, policy: MetaPolicy, q_runs: int, seed_base: int
) -> dict[int, np.ndarray]:
    """Final objective per (test problem, run), with canonical seed derivation.

    Both the baseline and candidate evaluations go through this helper, so a
    shared seed base reproduces identical problem instances and episodes.
    """
    out = {}
    for fid in task.test_functions:
        values = np.empty(q_runs)
        for q in range(q_runs):
            inst_seed = derive_seed(seed_base, task.id, "test-instance", fid, q)
            ep_seed = derive_seed(seed_base, task.id, "test-episode", fid, q)
            problem = make_instance(task, fid, inst_seed)
            values[q] = run_episode(task, extractor, policy, problem, ep_seed).f_star
        out[fid] = values
    return out


def baseline_extractor() -> HandcraftedExtractor:
    return HandcraftedExtractor()


def compute_baseline(task: TaskSpec, q_runs: int, seed_base: int) -> BaselineStats:
    """Meta-train the baseline pipeline once and freeze its test statistics."""
    extractor = baseline_extractor()
    trained = meta_train(task, extractor, seed=derive_seed(seed_base, task.id, "metatrain"))
    fstars = run_test_episodes(task, extractor, trained.policy, q_runs, seed_base)
    stats = {
        fid: (float(np.mean(v)), float(np.std(v))) for fid, v in fstars.items()
    }
    return BaselineStats(task_id=task.id, q_runs=q_runs, seed_base=seed_base, stats=stats)


@dataclass
class UpsilonResult:
    value: float
    per_problem: dict  # function id -> mean z-score
    z_table: dict  # function id -> list of per-run z-scores
    fe_meta_train: int
    fe_test: int


def upsilon_from_fstars(
    task: TaskSpec, baseline: BaselineStats, fstars: dict
) -> tuple[float, dict, dict]:
    """Score final values against baseline stats: (mean, per problem, z table).

    Per problem, the mean z-score is accumulated as -(mean f* - mu) / sigma,
    which equals the mean of per-run z-scores and is exactly zero when the
    candidate reproduces the baseline runs bit for bit.
    """
    per_problem = {}
    z_table = {}
    for fid, values in fstars.items():
        mu_p, sigma_p = baseline.stats[fid]
        z_table[fid] = [z_score(float(v), mu_p, sigma_p) for v in values]
        if sigma_p < SIGMA_FLOOR:
            per_problem[fid] = float(np.mean(z_table[fid]))
        else:
            per_problem[fid] = -(float(np.mean(values)) - mu_p) / sigma_p
    value = float(np.mean([per_problem[fid] for fid in task.test_functions]))
    return value, per_problem, z_table


def relative_performance(
    extractor, task: TaskSpec, baseline: BaselineStats, q_runs: int, seed_base: int
) -> UpsilonResult:
    """Mean z-score of the candidate pipeline against the cached baseline."""
    missing = [fid for fid in task.test_functions if fid not in baseline.stats]
    if missing:
        raise ConfigError(
            f"baseline stats for task {task.id} missing problems {missing}"
        )
    trained = meta_train(task, extractor, seed=derive_seed(seed_base, task.id, "metatrain"))
    fstars = run_test_episodes(task, extractor, trained.policy, q_runs, seed_base)
    value, per_problem, z_table = upsilon_from_fstars(task, baseline, fstars)
    return UpsilonResult(
        value=value,
        per_problem=per_problem,
        z_table=z_table,
        fe_meta_train=trained.fe_used,
        fe_test=q_runs * len(task.test_functions) * task.budget,
    )
