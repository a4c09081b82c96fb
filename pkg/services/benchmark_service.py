"""
Benchmark Service
Adversary training, convergence detection and the resilience / robustness
evaluation procedures that turn episodes into a BenchmarkReport
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from agents.dqn_agent import DQNAgent
from agents.target_policies import PolicyKind, TargetPolicy, TrainConfig, act
from environments.adversarial_env import (
    AdversarialTask,
    BenchmarkMode,
    BudgetConfig,
    CostFunction,
    TraceRecord,
    UniformCost,
)
from environments.cartpole_env import CartPoleEnv, episode_seed
from services.errors import ConfigurationError
from services.qstar_service import QFunction, QSource

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
SUITE_VERSION = "1.0.0"
ADVERSARY_STREAM = 2_000_000
TRAINING_AVG_WINDOW = 100
FREE_PERTURBATIONS = "delta_max=0 with over_budget=penalize makes every perturbation free; use over_budget=block"


class ConvergenceCriteria(BaseModel):
    """When the adversary's regret and perturbation count have settled"""
    regret_window: int = Field(default=200, gt=0)
    regret_tolerance: float = Field(default=2.0, gt=0.0)
    stability_window: int = Field(default=200, gt=0)
    perturb_avg_window: int = Field(default=100, gt=0)
    perturb_std_tolerance: float = Field(default=0.5, gt=0.0)
    max_steps: int = Field(default=100_000, gt=0)

    @property
    def required_history(self) -> int:
        return max(self.regret_window, self.perturb_avg_window) + self.stability_window


class EpisodeRecord(BaseModel):
    episode_index: int
    seed: int
    nominal_return: float
    perturbed_return: float
    regret: float
    cost_total: float
    perturbation_timesteps: List[int] = Field(default_factory=list)
    episode_length: int
    adversary_return: float = 0.0
    over_budget_perturbations: int = 0
    # per-step records go to the trace log, not the episode log
    trace: List[TraceRecord] = Field(default_factory=list, exclude=True)

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.regret != self.nominal_return - self.perturbed_return:
            raise ValueError("regret must equal nominal_return - perturbed_return")
        if any(t < 0 or t >= self.episode_length for t in self.perturbation_timesteps):
            raise ValueError("perturbation timesteps must lie inside the episode")
        return self

    @property
    def perturbations(self) -> int:
        return len(self.perturbation_timesteps)


class TargetDescriptor(BaseModel):
    policy_id: str
    kind: PolicyKind
    train_seed: int
    env_seed: int
    final_eval_return: float

    @classmethod
    def of(cls, policy: TargetPolicy) -> "TargetDescriptor":
        return cls(
            policy_id=policy.policy_id,
            kind=policy.kind,
            train_seed=policy.train_seed,
            env_seed=policy.env_seed,
            final_eval_return=policy.final_eval_return,
        )


class PerturbationHistogram(BaseModel):
    counts: List[int]
    first_quartile_fraction: float
    mean_episode_length: float

    @property
    def total(self) -> int:
        return int(sum(self.counts))


class TrainingSummary(BaseModel):
    """Statistics of the adversary's training episodes (last TRAINING_AVG_WINDOW for averages)"""
    converged: bool = False
    training_steps: int = 0
    training_episodes: int = 0
    optimal_adversarial_return: float = 0.0
    max_training_regret: float = 0.0
    avg_regret: float = 0.0
    avg_perturbations: float = 0.0


class BenchmarkReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    suite_version: str = SUITE_VERSION
    mode: BenchmarkMode
    target: TargetDescriptor
    adversary_trained_against: str
    budget: BudgetConfig
    cost: Dict[str, Any]
    q_source: str
    converged: bool
    training_steps: int
    training_episodes: int
    optimal_adversarial_return: float
    max_adversarial_regret: float
    training_avg_regret: float
    training_avg_perturbations: float
    episodes: int
    test_mean_regret: float
    test_mean_perturbations: float
    test_mean_cost: float
    test_max_regret: float
    epsilon_max: Optional[float] = None
    histogram: List[int]
    first_quartile_fraction: float
    mean_episode_length: float
    seeds: Dict[str, int]
    criteria: ConvergenceCriteria
    design_flags: Dict[str, Any] = Field(default_factory=dict)
    physics: Dict[str, Any] = Field(default_factory=dict)
    run_config: Dict[str, Any] = Field(default_factory=dict)


@dataclass
class AdversaryTrainingResult:
    adversary: TargetPolicy
    mode: BenchmarkMode
    budget: BudgetConfig
    summary: TrainingSummary
    training_curve: List[Dict[str, Any]] = field(default_factory=list)
    checkpoint: str = "final"

    @property
    def trained_against(self) -> str:
        return self.adversary.metadata.get("trained_against", "")

    @classmethod
    def from_policy(cls, adversary: TargetPolicy) -> "AdversaryTrainingResult":
        """Rebuild the training result carried in a saved adversary artifact"""
        meta = adversary.metadata
        if meta.get("role") != "adversary":
            raise ConfigurationError(f"{adversary.policy_id} is not an adversary artifact")
        return cls(
            adversary=adversary,
            mode=BenchmarkMode(meta["mode"]),
            budget=BudgetConfig.model_validate(meta["budget"]),
            summary=TrainingSummary.model_validate(meta["training_summary"]),
            checkpoint=meta.get("checkpoint", "final"),
        )


# ============================================================================
# Convergence and training statistics
# ============================================================================

def converged(curve: List[Dict[str, Any]], criteria: ConvergenceCriteria) -> bool:
    """
    Regret and perturbation count have settled.

    (a) the rolling regret_window mean regret moves by less than
    regret_tolerance over the last stability_window episodes, and (b) the
    rolling perturb_avg_window mean perturbation count has a standard
    deviation below perturb_std_tolerance over the same span.
    """
    needed = criteria.required_history
    if len(curve) < needed:
        return False
    tail = pd.DataFrame(curve[-needed:], columns=["regret", "perturbations"]).astype(float)

    regret_means = tail["regret"].rolling(criteria.regret_window).mean().iloc[-criteria.stability_window:]
    if regret_means.max() - regret_means.min() >= criteria.regret_tolerance:
        return False

    perturb_means = tail["perturbations"].rolling(criteria.perturb_avg_window).mean().iloc[-criteria.stability_window:]
    return bool(perturb_means.std(ddof=0) < criteria.perturb_std_tolerance)


def summarize_training(curve: List[Dict[str, Any]], steps: int, is_converged: bool) -> TrainingSummary:
    if not curve:
        return TrainingSummary(converged=is_converged, training_steps=steps)
    frame = pd.DataFrame(curve)
    last = frame.tail(TRAINING_AVG_WINDOW)
    return TrainingSummary(
        converged=is_converged,
        training_steps=steps,
        training_episodes=len(frame),
        optimal_adversarial_return=float(np.mean(last["return"])),
        max_training_regret=float(frame["regret"].max()),
        avg_regret=float(np.mean(last["regret"])),
        avg_perturbations=float(np.mean(last["perturbations"])),
    )


def _describe_cost(cost_fn: CostFunction) -> Dict[str, Any]:
    return cost_fn.describe() if hasattr(cost_fn, "describe") else {"type": type(cost_fn).__name__}


# ============================================================================
# Adversary training
# ============================================================================

def train_adversary(
    target: TargetPolicy,
    qfn: QFunction,
    mode: BenchmarkMode,
    budget: Optional[BudgetConfig] = None,
    cost_fn: Optional[CostFunction] = None,
    criteria: Optional[ConvergenceCriteria] = None,
    adv_config: Optional[TrainConfig] = None,
    adversary_seed: int = 0,
    env_seed: int = 0,
    env: Optional[CartPoleEnv] = None,
) -> AdversaryTrainingResult:
    """
    Train a DQN adversary in the augmented MDP of `target` until the
    convergence criteria hold or `criteria.max_steps` run out.

    Without convergence the checkpoint with the best trailing mean regret is
    returned and flagged; the numbers it yields are lower bounds.
    """
    mode = BenchmarkMode(mode)
    budget = budget or BudgetConfig()
    cost_fn = cost_fn or UniformCost()
    criteria = criteria or ConvergenceCriteria()
    adv_config = adv_config or TrainConfig.adversary_defaults(timesteps=criteria.max_steps)
    if mode == BenchmarkMode.ROBUSTNESS and budget.delta_max is None:
        raise ConfigurationError("Robustness benchmarking needs a finite delta_max")
    if mode == BenchmarkMode.ROBUSTNESS and budget.perturbations_are_free:
        raise ConfigurationError(FREE_PERTURBATIONS)

    logger.info(f"🔄 Training {mode.value} adversary against {target.policy_id} "
                f"(q_source={qfn.source.value}, delta_max={budget.delta_max})")
    task = AdversarialTask(target, qfn, mode, episode_seed(env_seed, ADVERSARY_STREAM), budget, cost_fn, env)
    agent = DQNAgent(task.obs_dim, task.n_actions, adv_config, np.random.default_rng(adversary_seed))

    history: List[Dict[str, Any]] = []
    best = {"regret": -np.inf, "params": None}

    def on_episode_end(entry: Dict[str, Any]) -> bool:
        history.append(entry)
        if len(history) >= TRAINING_AVG_WINDOW:
            trailing = float(np.mean([e["regret"] for e in history[-TRAINING_AVG_WINDOW:]]))
            if trailing > best["regret"]:
                best["regret"] = trailing
                best["params"] = agent.q_params.copy()
        return converged(history, criteria)

    result = agent.run(task, criteria.max_steps, on_episode_end=on_episode_end)
    is_converged = result.stopped_early
    params, checkpoint = agent.q_params.copy(), "converged" if is_converged else "final"
    if not is_converged and best["params"] is not None:
        params, checkpoint = best["params"], "best_regret"
        logger.warning(f"⚠️ Adversary did not converge in {criteria.max_steps} steps; "
                       f"using best trailing regret {best['regret']:.2f}")
    else:
        logger.info(f"✅ Adversary finished after {result.timesteps} steps ({checkpoint})")

    summary = summarize_training(result.learning_curve, result.timesteps, is_converged)
    adversary = TargetPolicy(
        kind=PolicyKind.DQN,
        value_params=params,
        train_config=adv_config,
        train_seed=adversary_seed,
        env_seed=env_seed,
        metadata={
            "role": "adversary",
            "mode": mode.value,
            "budget": budget.model_dump(mode="json"),
            "cost": _describe_cost(cost_fn),
            "trained_against": target.policy_id,
            "q_source": qfn.source.value,
            "checkpoint": checkpoint,
            "criteria": criteria.model_dump(mode="json"),
            "training_summary": summary.model_dump(mode="json"),
        },
    )
    return AdversaryTrainingResult(adversary, mode, budget, summary, result.learning_curve, checkpoint)


# ============================================================================
# Evaluation
# ============================================================================

def run_adversarial_episode(
    target: TargetPolicy,
    adversary: TargetPolicy,
    qfn: QFunction,
    mode: BenchmarkMode,
    budget: BudgetConfig,
    cost_fn: CostFunction,
    seed: int,
    index: int,
    env: Optional[CartPoleEnv] = None,
) -> EpisodeRecord:
    """One greedy-adversary episode plus its unperturbed replay"""
    task = AdversarialTask(target, qfn, mode, env_seed=seed, budget=budget, cost_fn=cost_fn, env=env)
    obs = task.reset(seed)
    terminal = False
    while not terminal:
        obs, _, terminal, _ = task.step(act(adversary, obs, greedy=True))
    summary = task.episode_summary()
    return EpisodeRecord(
        episode_index=index,
        seed=seed,
        nominal_return=summary["nominal_return"],
        perturbed_return=summary["perturbed_return"],
        regret=summary["regret"],
        cost_total=summary["cost_total"],
        perturbation_timesteps=summary["perturbation_timesteps"],
        episode_length=summary["episode_length"],
        adversary_return=summary["adversary_return"],
        over_budget_perturbations=summary["over_budget_perturbations"],
        trace=[record.model_copy(update={"episode": index}) for record in task.trace],
    )


def run_episodes(
    target: TargetPolicy,
    adversary: TargetPolicy,
    qfn: QFunction,
    mode: BenchmarkMode,
    budget: BudgetConfig,
    cost_fn: CostFunction,
    episodes: int,
    eval_seed: int,
    workers: int = 1,
    env: Optional[CartPoleEnv] = None,
) -> List[EpisodeRecord]:
    """Evaluation episodes on per-episode seeds, merged by episode index"""
    def run(index: int) -> EpisodeRecord:
        return run_adversarial_episode(target, adversary, qfn, mode, budget, cost_fn,
                                       episode_seed(eval_seed, index), index, env)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run, range(episodes)))
    else:
        records = [run(i) for i in range(episodes)]
    return sorted(records, key=lambda r: r.episode_index)


def perturbation_histogram(records: List[EpisodeRecord]) -> PerturbationHistogram:
    """Perturbations per episodic timestep, and the share before a quarter of the mean episode length"""
    if not records:
        raise ConfigurationError("A perturbation histogram needs at least one episode")
    length = max(r.episode_length for r in records)
    counts = np.zeros(length, dtype=np.int64)
    for record in records:
        for t in record.perturbation_timesteps:
            counts[t] += 1

    mean_length = float(np.mean([r.episode_length for r in records]))
    total = int(counts.sum())
    early = int(sum(counts[t] for t in range(length) if t < mean_length / 4.0))
    return PerturbationHistogram(
        counts=[int(c) for c in counts],
        first_quartile_fraction=early / total if total else 0.0,
        mean_episode_length=mean_length,
    )


def _design_flags(qfn: QFunction, budget: BudgetConfig, adversary: TargetPolicy) -> Dict[str, Any]:
    return {
        "exploration": "epsilon-greedy annealing in place of parameter-space noise",
        "prioritized_replay": {"alpha": adversary.train_config.prioritized_alpha,
                               "beta0": adversary.train_config.prioritized_beta0},
        "q_source": qfn.source.value,
        "q_is_policy_evaluation": qfn.source == QSource.IMITATED,
        "argmin_tie_break": "lowest action index",
        "terminal_check": "post-step state",
        "terminal_bonus_includes_last_reward": True,
        "over_budget": budget.over_budget.value,
        "nominal_return": "measured by unperturbed replay of the same seed",
        "training_average_window": TRAINING_AVG_WINDOW,
    }


def _build_report(
    target: TargetPolicy,
    adversary: AdversaryTrainingResult,
    qfn: QFunction,
    records: List[EpisodeRecord],
    cost_fn: CostFunction,
    eval_seed: int,
    criteria: ConvergenceCriteria,
    robustness: bool,
) -> BenchmarkReport:
    histogram = perturbation_histogram(records)
    regrets = [r.regret for r in records]
    test_max = float(np.max(regrets))
    summary = adversary.summary
    return BenchmarkReport(
        mode=adversary.mode,
        target=TargetDescriptor.of(target),
        adversary_trained_against=adversary.trained_against,
        budget=adversary.budget,
        cost=_describe_cost(cost_fn),
        q_source=qfn.source.value,
        converged=summary.converged,
        training_steps=summary.training_steps,
        training_episodes=summary.training_episodes,
        optimal_adversarial_return=summary.optimal_adversarial_return,
        max_adversarial_regret=max(summary.max_training_regret, test_max),
        training_avg_regret=summary.avg_regret,
        training_avg_perturbations=summary.avg_perturbations,
        episodes=len(records),
        test_mean_regret=float(np.mean(regrets)),
        test_mean_perturbations=float(np.mean([r.perturbations for r in records])),
        test_mean_cost=float(np.mean([r.cost_total for r in records])),
        test_max_regret=test_max,
        epsilon_max=test_max if robustness else None,
        histogram=histogram.counts,
        first_quartile_fraction=histogram.first_quartile_fraction,
        mean_episode_length=histogram.mean_episode_length,
        seeds={
            "target_train_seed": target.train_seed,
            "target_env_seed": target.env_seed,
            "adversary_seed": adversary.adversary.train_seed,
            "adversary_env_seed": adversary.adversary.env_seed,
            "eval_seed": eval_seed,
        },
        criteria=criteria,
        design_flags=_design_flags(qfn, adversary.budget, adversary.adversary),
        physics=CartPoleEnv().physics_constants(),
    )


def _criteria_of(adversary: AdversaryTrainingResult) -> ConvergenceCriteria:
    return ConvergenceCriteria.model_validate(adversary.adversary.metadata.get("criteria", {}))


def run_resilience(
    target: TargetPolicy,
    adversary: AdversaryTrainingResult,
    qfn: QFunction,
    episodes: int = 100,
    eval_seed: int = 0,
    cost_fn: Optional[CostFunction] = None,
    workers: int = 1,
) -> Tuple[BenchmarkReport, List[EpisodeRecord]]:
    """Mean perturbation count (and regret) of the trained adversary over `episodes` runs"""
    if adversary.mode != BenchmarkMode.RESILIENCE:
        raise ConfigurationError(f"Adversary was trained for {adversary.mode.value}, not resilience")
    cost_fn = cost_fn or UniformCost()
    logger.info(f"🔄 Resilience evaluation of {target.policy_id} over {episodes} episodes")
    records = run_episodes(target, adversary.adversary, qfn, BenchmarkMode.RESILIENCE, adversary.budget,
                           cost_fn, episodes, eval_seed, workers)
    report = _build_report(target, adversary, qfn, records, cost_fn, eval_seed, _criteria_of(adversary), False)
    logger.info(f"✅ {target.policy_id}: mean regret {report.test_mean_regret:.2f}, "
                f"mean perturbations {report.test_mean_perturbations:.2f}")
    return report, records


def run_robustness(
    target: TargetPolicy,
    adversary: AdversaryTrainingResult,
    qfn: QFunction,
    delta_max: int,
    episodes: int = 100,
    eval_seed: int = 0,
    cost_fn: Optional[CostFunction] = None,
    workers: int = 1,
) -> Tuple[BenchmarkReport, List[EpisodeRecord]]:
    """Mean regret under the perturbation budget; epsilon_max is the largest regret seen"""
    if adversary.mode != BenchmarkMode.ROBUSTNESS:
        raise ConfigurationError(f"Adversary was trained for {adversary.mode.value}, not robustness")
    if adversary.budget.delta_max != delta_max:
        raise ConfigurationError(
            f"Adversary was trained with delta_max={adversary.budget.delta_max}, not {delta_max}"
        )
    cost_fn = cost_fn or UniformCost()
    logger.info(f"🔄 Robustness evaluation of {target.policy_id} (delta_max={delta_max}) over {episodes} episodes")
    records = run_episodes(target, adversary.adversary, qfn, BenchmarkMode.ROBUSTNESS, adversary.budget,
                           cost_fn, episodes, eval_seed, workers)
    report = _build_report(target, adversary, qfn, records, cost_fn, eval_seed, _criteria_of(adversary), True)
    logger.info(f"✅ {target.policy_id}: mean regret {report.test_mean_regret:.2f}, "
                f"epsilon_max {report.epsilon_max:.2f}")
    return report, records


# ============================================================================
# Service
# ============================================================================

class BenchmarkService:
    """
    One benchmark setting (mode, budget, cost, criteria, seeds) applied to
    targets: obtains an adversary for a target, trained or reused, and
    evaluates the target against it.
    """

    def __init__(
        self,
        mode: BenchmarkMode,
        budget: Optional[BudgetConfig] = None,
        cost_fn: Optional[CostFunction] = None,
        criteria: Optional[ConvergenceCriteria] = None,
        episodes: int = 100,
        eval_seed: int = 0,
        adversary_seed: int = 0,
        workers: int = 1,
    ):
        self.mode = BenchmarkMode(mode)
        self.budget = budget or BudgetConfig()
        self.cost_fn = cost_fn or UniformCost()
        self.criteria = criteria or ConvergenceCriteria()
        self.episodes = episodes
        self.eval_seed = eval_seed
        self.adversary_seed = adversary_seed
        self.workers = workers
        if self.mode == BenchmarkMode.ROBUSTNESS:
            if self.budget.delta_max is None:
                raise ConfigurationError("Robustness benchmarks need a finite delta_max")
            if self.budget.perturbations_are_free:
                raise ConfigurationError(FREE_PERTURBATIONS)

    def obtain_adversary(self, target: TargetPolicy, qfn: QFunction,
                         saved: Optional[TargetPolicy] = None) -> AdversaryTrainingResult:
        if saved is not None:
            adversary = AdversaryTrainingResult.from_policy(saved)
            logger.info(f"🔄 Reusing adversary trained against {adversary.trained_against}")
            return adversary
        return train_adversary(
            target, qfn, self.mode,
            budget=self.budget,
            cost_fn=self.cost_fn,
            criteria=self.criteria,
            adversary_seed=self.adversary_seed,
            env_seed=self.adversary_seed,
        )

    def evaluate(self, target: TargetPolicy, adversary: AdversaryTrainingResult,
                 qfn: QFunction) -> Tuple[BenchmarkReport, List[EpisodeRecord]]:
        if self.mode == BenchmarkMode.RESILIENCE:
            return run_resilience(target, adversary, qfn, self.episodes, self.eval_seed, self.cost_fn, self.workers)
        return run_robustness(target, adversary, qfn, self.budget.delta_max, self.episodes, self.eval_seed,
                              self.cost_fn, self.workers)
