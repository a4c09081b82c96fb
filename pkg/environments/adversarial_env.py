"""
Adversarial Environment
The adversary's MDP around a fixed target: augmented states, the adversarial
action sets and reward assignment for the resilience and robustness procedures
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Protocol

import numpy as np
from pydantic import BaseModel, Field

from agents.target_policies import TargetPolicy, act, rollout_return
from environments.cartpole_env import MAX_EPISODE_STEPS, CartPoleEnv, EnvState, episode_seed
from services.errors import ConfigurationError, ContractViolation

logger = logging.getLogger(__name__)

R_MAX = float(MAX_EPISODE_STEPS)


class BenchmarkMode(str, Enum):
    RESILIENCE = "resilience"
    ROBUSTNESS = "robustness"


class OverBudget(str, Enum):
    PENALIZE = "penalize"
    BLOCK = "block"


class AdvActionKind(str, Enum):
    NO_ACTION = "no_action"
    PERTURB = "perturb"
    INDUCE = "induce"


@dataclass(frozen=True)
class AdvAction:
    """NoAction, Perturb (reduced set, carries the argmin action) or Induce(a)"""
    kind: AdvActionKind
    induced_action: Optional[int] = None

    @property
    def is_perturbation(self) -> bool:
        return self.kind != AdvActionKind.NO_ACTION


NO_ACTION = AdvAction(AdvActionKind.NO_ACTION)


class BudgetConfig(BaseModel):
    """Adversarial budget; None means unbounded. Only delta_max changes execution."""
    delta_max: Optional[int] = Field(default=None, ge=0)
    o_max: Optional[int] = Field(default=None, ge=0)
    n_max: Optional[int] = Field(default=None, ge=0)
    p_perturb: float = Field(default=1.0, ge=0.0, le=1.0)
    over_budget: OverBudget = OverBudget.PENALIZE

    @property
    def perturbations_are_free(self) -> bool:
        """Under `penalize` a zero budget charges cost * 0 for every perturbation"""
        return self.delta_max == 0 and self.over_budget == OverBudget.PENALIZE


# ============================================================================
# Perturbation costs
# ============================================================================

class CostFunction(Protocol):
    def __call__(self, state: EnvState, induced_action: int) -> float: ...


@dataclass(frozen=True)
class UniformCost:
    """The same price for every perturbation"""
    cost: float = 1.0

    def __post_init__(self):
        if self.cost < 0:
            raise ConfigurationError(f"Perturbation cost must be nonnegative, got {self.cost}")

    def __call__(self, state: EnvState, induced_action: int) -> float:
        return self.cost

    def describe(self) -> Dict[str, Any]:
        return {"type": "uniform", "cost": self.cost}


@dataclass(frozen=True)
class CallableCost:
    fn: Callable[[EnvState, int], float]
    name: str = "callable"

    def __call__(self, state: EnvState, induced_action: int) -> float:
        value = float(self.fn(state, induced_action))
        if value < 0:
            raise ConfigurationError(f"Perturbation cost must be nonnegative, got {value}")
        return value

    def describe(self) -> Dict[str, Any]:
        return {"type": "callable", "name": self.name}


# ============================================================================
# States and contexts
# ============================================================================

@dataclass(frozen=True)
class AugmentedState:
    """Target observation plus the target's greedy action there"""
    observation: np.ndarray
    target_action: int
    env_state: EnvState


@dataclass(frozen=True)
class AdvStepContext:
    adv_count: int = 0
    score_t: float = 0.0
    r_max: float = R_MAX
    cost_fn: CostFunction = field(default_factory=UniformCost)


class AdvStepOutcome(NamedTuple):
    next_state: AugmentedState
    adversary_reward: float
    terminal: bool
    context: AdvStepContext
    target_reward: float
    executed_action: int
    induced_action: Optional[int] = None
    cost: float = 0.0
    over_budget: bool = False


def augment(env_state: EnvState, target: TargetPolicy) -> AugmentedState:
    obs = env_state.observation
    return AugmentedState(observation=obs, target_action=act(target, obs, greedy=True), env_state=env_state)


def encode(aug_state: AugmentedState, n_actions: int = 2) -> np.ndarray:
    """Observation followed by the one-hot target action"""
    onehot = np.zeros(n_actions)
    onehot[aug_state.target_action] = 1.0
    return np.concatenate([np.asarray(aug_state.observation, dtype=np.float64), onehot])


def adversarial_regret(nominal_return: float, perturbed_return: float) -> float:
    return float(nominal_return) - float(perturbed_return)


def adv_action_set(aug_state: AugmentedState, qfn, cost_fn: CostFunction, n_actions: int) -> List[AdvAction]:
    """
    Actions available to the adversary at `aug_state`.

    With a cost that does not depend on the induced action the set reduces to
    {NoAction, Perturb(argmin_a Q)}; otherwise every non-greedy action is
    offered as Induce(a), in increasing action order.
    """
    if n_actions <= 1:
        return [NO_ACTION]
    costs = [cost_fn(aug_state.env_state, a) for a in range(n_actions)]
    if all(c == costs[0] for c in costs):
        induced = qfn.induced_action(aug_state.env_state, aug_state.target_action)
        return [NO_ACTION, AdvAction(AdvActionKind.PERTURB, induced)]
    return [NO_ACTION] + [
        AdvAction(AdvActionKind.INDUCE, a) for a in range(n_actions) if a != aug_state.target_action
    ]


def _resolve_induced(adv_action: AdvAction, aug_state: AugmentedState, qfn) -> int:
    if adv_action.induced_action is not None:
        return adv_action.induced_action
    return qfn.induced_action(aug_state.env_state, aug_state.target_action)


def _advance(aug_state: AugmentedState, action: int, ctx: AdvStepContext, env: CartPoleEnv,
             target: TargetPolicy):
    next_env_state, result = env.step(aug_state.env_state, action)
    score = ctx.score_t + result.reward
    return augment(next_env_state, target), result, score


def resilience_step(aug_state: AugmentedState, adv_action: AdvAction, ctx: AdvStepContext,
                    env: CartPoleEnv, target: TargetPolicy, qfn) -> AdvStepOutcome:
    """Reward assignment for measuring resilience: pay the cost, collect the regret at the end"""
    if aug_state.env_state.terminal:
        raise ContractViolation("Cannot step the adversarial MDP after a terminal state")

    adv_count = ctx.adv_count
    induced, cost = None, 0.0
    if adv_action.is_perturbation:
        induced = _resolve_induced(adv_action, aug_state, qfn)
        cost = ctx.cost_fn(aug_state.env_state, induced)
        action = induced
        reward = -cost
        adv_count += 1
    else:
        action = aug_state.target_action
        reward = 0.0

    next_aug, result, score = _advance(aug_state, action, ctx, env, target)
    if result.terminal:
        reward += ctx.r_max - score
    next_ctx = replace(ctx, adv_count=adv_count, score_t=score)
    return AdvStepOutcome(next_aug, reward, result.terminal, next_ctx, result.reward, action, induced, cost)


def robustness_step(aug_state: AugmentedState, adv_action: AdvAction, ctx: AdvStepContext,
                    env: CartPoleEnv, target: TargetPolicy, qfn, budget: BudgetConfig) -> AdvStepOutcome:
    """
    Reward assignment for measuring robustness under `budget.delta_max`.

    A perturbation past the budget costs delta_max times as much. Under
    `penalize` it is still applied; under `block` the target acts on its own.
    The perturbation count resets when the episode ends.
    """
    if aug_state.env_state.terminal:
        raise ContractViolation("Cannot step the adversarial MDP after a terminal state")

    adv_count = ctx.adv_count
    over_budget = False
    induced, cost = None, 0.0
    action = aug_state.target_action
    reward = 0.0
    if adv_action.is_perturbation:
        induced = _resolve_induced(adv_action, aug_state, qfn)
        cost = ctx.cost_fn(aug_state.env_state, induced)
        over_budget = budget.delta_max is not None and adv_count >= budget.delta_max
        if over_budget:
            reward = -cost * budget.delta_max
            if budget.over_budget == OverBudget.PENALIZE:
                action = induced
        else:
            reward = -cost
            action = induced
        adv_count += 1

    next_aug, result, score = _advance(aug_state, action, ctx, env, target)
    if result.terminal:
        reward += ctx.r_max - score
        adv_count = 0
    next_ctx = replace(ctx, adv_count=adv_count, score_t=score)
    return AdvStepOutcome(next_aug, reward, result.terminal, next_ctx, result.reward, action,
                          induced, cost, over_budget)


# ============================================================================
# Gym-style wrapper used for adversary training and evaluation
# ============================================================================

class TraceRecord(BaseModel):
    episode: int
    t: int
    adv_action: AdvActionKind
    induced_action: Optional[int] = None
    executed_action: int
    adversary_reward: float
    target_reward: float
    adv_count: int
    over_budget: bool = False


class AdversarialTask:
    """
    The adversary's view of one target: reset()/step(index) over encoded
    augmented states. Index 0 is NoAction, index i >= 1 the i-th candidate of
    the current adversarial action set.

    Every episode is also replayed without perturbations from the same seed so
    its regret is measured against the nominal return.
    """

    def __init__(
        self,
        target: TargetPolicy,
        qfn,
        mode: BenchmarkMode,
        env_seed: int,
        budget: Optional[BudgetConfig] = None,
        cost_fn: Optional[CostFunction] = None,
        env: Optional[CartPoleEnv] = None,
        r_max: float = R_MAX,
        measure_nominal: bool = True,
    ):
        self.env = env or CartPoleEnv()
        self.target = target
        self.qfn = qfn
        self.mode = BenchmarkMode(mode)
        self.budget = budget or BudgetConfig()
        self.cost_fn = cost_fn or UniformCost()
        self.env_seed = env_seed
        self.r_max = r_max
        self.measure_nominal = measure_nominal
        self.n_actions = self.env.n_actions
        self.obs_dim = self.env.obs_dim + self.env.n_actions
        self.episode_index = 0
        self.aug_state: Optional[AugmentedState] = None
        self.ctx = AdvStepContext(r_max=r_max, cost_fn=self.cost_fn)
        self.trace: List[TraceRecord] = []
        self._episode_seed = 0
        self._adversary_return = 0.0
        self._cost_total = 0.0
        self._perturbation_timesteps: List[int] = []
        self._over_budget_count = 0

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is None:
            seed = episode_seed(self.env_seed, self.episode_index)
        self.episode_index += 1
        self._episode_seed = seed
        self.aug_state = augment(self.env.reset(seed), self.target)
        self.ctx = AdvStepContext(r_max=self.r_max, cost_fn=self.cost_fn)
        self.trace = []
        self._adversary_return = 0.0
        self._cost_total = 0.0
        self._perturbation_timesteps = []
        self._over_budget_count = 0
        logger.debug(f"Adversarial {self.mode.value} episode {self.episode_index - 1} reset from seed {seed}")
        return encode(self.aug_state, self.n_actions)

    def action_set(self) -> List[AdvAction]:
        if self.aug_state is None:
            raise ContractViolation("reset() must be called before step()")
        return adv_action_set(self.aug_state, self.qfn, self.cost_fn, self.n_actions)

    def step_action(self, adv_action: AdvAction) -> AdvStepOutcome:
        if self.aug_state is None:
            raise ContractViolation("reset() must be called before step()")
        t = self.aug_state.env_state.step_count
        if self.mode == BenchmarkMode.RESILIENCE:
            outcome = resilience_step(self.aug_state, adv_action, self.ctx, self.env, self.target, self.qfn)
        else:
            outcome = robustness_step(self.aug_state, adv_action, self.ctx, self.env, self.target,
                                      self.qfn, self.budget)

        count = self.ctx.adv_count + (1 if adv_action.is_perturbation else 0)
        if adv_action.is_perturbation:
            self._perturbation_timesteps.append(t)
            self._cost_total += outcome.cost
            self._over_budget_count += int(outcome.over_budget)
        self.trace.append(TraceRecord(
            episode=self.episode_index - 1,
            t=t,
            adv_action=adv_action.kind,
            induced_action=outcome.induced_action,
            executed_action=outcome.executed_action,
            adversary_reward=outcome.adversary_reward,
            target_reward=outcome.target_reward,
            adv_count=count,
            over_budget=outcome.over_budget,
        ))
        self._adversary_return += outcome.adversary_reward
        self.aug_state = outcome.next_state
        self.ctx = outcome.context
        return outcome

    def step(self, index: int):
        actions = self.action_set()
        if not 0 <= index < len(actions):
            raise ContractViolation(f"Adversary action index {index} outside a set of {len(actions)}")
        outcome = self.step_action(actions[index])
        return encode(outcome.next_state, self.n_actions), outcome.adversary_reward, outcome.terminal, False

    def nominal_return(self) -> float:
        """Return of the unperturbed target from the current episode's seed"""
        return rollout_return(self.target, self._episode_seed, self.env)

    def episode_summary(self) -> Dict[str, Any]:
        perturbed = self.ctx.score_t
        nominal = self.nominal_return() if self.measure_nominal else self.r_max
        return {
            "seed": self._episode_seed,
            "nominal_return": nominal,
            "perturbed_return": perturbed,
            "regret": adversarial_regret(nominal, perturbed),
            "perturbations": len(self._perturbation_timesteps),
            "perturbation_timesteps": list(self._perturbation_timesteps),
            "over_budget_perturbations": self._over_budget_count,
            "cost_total": self._cost_total,
            "adversary_return": self._adversary_return,
            "episode_length": len(self.trace),
        }
