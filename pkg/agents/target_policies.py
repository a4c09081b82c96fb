"""
Target Policies
Policy artifacts, training configuration and the uniform act/evaluate interface
shared by the DQN, A2C and PPO trainers
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from agents.neural_core import MLParams, forward, params_from_dict, params_to_dict, softmax
from environments.cartpole_env import CartPoleEnv, episode_seed
from services.errors import ConfigurationError, SchemaError, TrainingDidNotConverge

logger = logging.getLogger(__name__)

ARTIFACT_SCHEMA_VERSION = 1


class PolicyKind(str, Enum):
    DQN = "dqn"
    A2C = "a2c"
    PPO = "ppo"


class TrainConfig(BaseModel):
    """Hyperparameters for one trainer; `for_kind` returns the published per-algorithm defaults"""
    kind: PolicyKind
    timesteps: int = Field(gt=0)
    gamma: float = Field(default=0.99, ge=0.0, le=1.0)
    learning_rate: float = Field(gt=0.0)
    hidden_sizes: List[int] = Field(default_factory=lambda: [64, 64])

    # DQN
    replay_size: int = Field(default=50000, gt=0)
    learn_start: int = Field(default=1000, ge=0)
    target_update_freq: int = Field(default=500, gt=0)
    prioritized: bool = True
    exploration_fraction: float = Field(default=0.1, gt=0.0, le=1.0)
    final_exploration_prob: float = Field(default=0.02, ge=0.0, le=1.0)
    batch_size: int = Field(default=32, gt=0)
    train_freq: int = Field(default=1, gt=0)
    double_q: bool = True
    grad_clip: float = Field(default=10.0, gt=0.0)
    prioritized_alpha: float = Field(default=0.6, ge=0.0)
    prioritized_beta0: float = Field(default=0.4, ge=0.0, le=1.0)
    prioritized_eps: float = Field(default=1e-6, gt=0.0)

    # A2C / PPO
    entropy_coef: float = Field(default=0.0, ge=0.0)
    value_coef: float = Field(default=0.5, ge=0.0)
    n_envs: int = Field(default=8, gt=0)
    rollout_len: int = Field(default=5, gt=0)
    max_grad_norm: float = Field(default=0.5, gt=0.0)

    # PPO
    minibatches: int = Field(default=32, gt=0)
    surrogate_epochs: int = Field(default=10, gt=0)
    gae_lambda: float = Field(default=0.95, ge=0.0, le=1.0)
    clip_range: float = Field(default=0.2, gt=0.0)

    # early stopping and final evaluation
    eval_interval: int = Field(default=10000, gt=0)
    eval_episodes: int = Field(default=10, gt=0)
    final_eval_episodes: int = Field(default=100, gt=0)
    success_threshold: float = 475.0

    @model_validator(mode="after")
    def _check_rollout_split(self):
        if self.kind == PolicyKind.PPO and (self.n_envs * self.rollout_len) % self.minibatches != 0:
            raise ValueError("n_envs * rollout_len must be divisible by minibatches")
        return self

    @classmethod
    def for_kind(cls, kind: Union[str, PolicyKind], **overrides) -> "TrainConfig":
        kind = PolicyKind(kind)
        defaults: Dict[str, Any] = {
            PolicyKind.DQN: {"timesteps": 100_000, "learning_rate": 1e-3},
            PolicyKind.A2C: {
                "timesteps": 500_000, "learning_rate": 7e-4, "entropy_coef": 0.0,
                "value_coef": 0.25, "n_envs": 8, "rollout_len": 5,
            },
            PolicyKind.PPO: {
                "timesteps": 1_000_000, "learning_rate": 3e-4, "entropy_coef": 0.0,
                "value_coef": 0.5, "n_envs": 8, "rollout_len": 2048, "minibatches": 32,
                "surrogate_epochs": 10, "gae_lambda": 0.95, "clip_range": 0.2,
                "eval_interval": 16384,
            },
        }[kind]
        return cls(kind=kind, **{**defaults, **overrides})

    @classmethod
    def adversary_defaults(cls, **overrides) -> "TrainConfig":
        """Adversarial DQN hyperparameters; training length is bounded by ConvergenceCriteria.max_steps"""
        return cls.for_kind(PolicyKind.DQN, **overrides)


@dataclass
class TargetPolicy:
    """
    A trained policy artifact.

    DQN policies keep their Q-network in `value_params` and have no
    `policy_params`; A2C/PPO keep logits in `policy_params` and V* in
    `value_params`.
    """
    kind: PolicyKind
    value_params: MLParams
    train_config: TrainConfig
    train_seed: int
    env_seed: int
    policy_params: Optional[MLParams] = None
    final_eval_return: float = 0.0
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def policy_id(self) -> str:
        return f"{self.kind.value}_seed{self.train_seed}"

    @property
    def obs_dim(self) -> int:
        return self.value_params.input_dim

    @property
    def n_actions(self) -> int:
        if self.kind == PolicyKind.DQN:
            return self.value_params.output_dim
        return self.policy_params.output_dim

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        if self.kind != PolicyKind.DQN:
            raise ConfigurationError(f"{self.kind.value} policies have no Q-network")
        return forward(self.value_params, obs)

    def state_value(self, obs: np.ndarray) -> Union[float, np.ndarray]:
        if self.kind == PolicyKind.DQN:
            raise ConfigurationError("DQN policies have no state-value head")
        values = forward(self.value_params, obs)
        return float(values[0]) if np.ndim(obs) == 1 else values[:, 0]

    def logits(self, obs: np.ndarray) -> np.ndarray:
        if self.kind == PolicyKind.DQN:
            raise ConfigurationError("DQN policies have no policy head")
        return forward(self.policy_params, obs)

    def action_distribution(self, obs: np.ndarray) -> np.ndarray:
        """Categorical action probabilities; DQN puts all mass on its greedy action"""
        if self.kind == PolicyKind.DQN:
            q = self.q_values(obs)
            probs = np.zeros_like(q)
            np.put_along_axis(probs, np.argmax(q, axis=-1)[..., None], 1.0, axis=-1)
            return probs
        return softmax(self.logits(obs))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": ARTIFACT_SCHEMA_VERSION,
            "kind": self.kind.value,
            "train_seed": int(self.train_seed),
            "env_seed": int(self.env_seed),
            "final_eval_return": float(self.final_eval_return),
            "train_config": self.train_config.model_dump(mode="json"),
            "policy_params": params_to_dict(self.policy_params) if self.policy_params is not None else None,
            "value_params": params_to_dict(self.value_params),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TargetPolicy":
        version = data.get("schema_version")
        if version != ARTIFACT_SCHEMA_VERSION:
            raise SchemaError(
                f"Policy artifact schema {version} is not supported (expected {ARTIFACT_SCHEMA_VERSION})",
                found=version, expected=ARTIFACT_SCHEMA_VERSION,
            )
        try:
            return cls(
                kind=PolicyKind(data["kind"]),
                value_params=params_from_dict(data["value_params"]),
                train_config=TrainConfig.model_validate(data["train_config"]),
                train_seed=data["train_seed"],
                env_seed=data["env_seed"],
                policy_params=params_from_dict(data["policy_params"]) if data.get("policy_params") else None,
                final_eval_return=data["final_eval_return"],
                metadata=data.get("metadata", {}),
            )
        except (KeyError, ValueError) as e:
            raise SchemaError(f"Policy artifact is missing or has invalid fields: {e}")


def save_policy(policy: TargetPolicy, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(policy.to_dict(), sort_keys=True, indent=2))
    logger.info(f"✅ Saved {policy.policy_id} artifact to {path}")
    return path


def load_policy(path: Union[str, Path]) -> TargetPolicy:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"Policy artifact {path} is not valid JSON: {e}")
    return TargetPolicy.from_dict(data)


def act(
    policy: TargetPolicy,
    obs: np.ndarray,
    greedy: bool = True,
    rng: Optional[np.random.Generator] = None,
    epsilon: float = 0.0,
) -> int:
    """Greedy argmax (lowest index on ties), or a sample / epsilon-greedy draw"""
    if policy.kind == PolicyKind.DQN:
        if not greedy and rng is not None and rng.random() < epsilon:
            return int(rng.integers(policy.n_actions))
        return int(np.argmax(policy.q_values(obs)))

    logits = policy.logits(obs)
    if greedy:
        return int(np.argmax(logits))
    if rng is None:
        raise ConfigurationError("Sampling actions requires an rng")
    return int(rng.choice(policy.n_actions, p=softmax(logits)))


@dataclass
class EvaluationResult:
    mean_return: float
    returns: List[float]


def rollout_return(policy: TargetPolicy, seed: int, env: Optional[CartPoleEnv] = None) -> float:
    """Return of one greedy episode started from `seed`"""
    env = env or CartPoleEnv()
    state = env.reset(seed)
    total = 0.0
    while not state.terminal:
        state, result = env.step(state, act(policy, state.observation, greedy=True))
        total += result.reward
    return total


def evaluate(policy: TargetPolicy, env_seed: int, episodes: int, workers: int = 1) -> EvaluationResult:
    """Greedy rollouts on per-episode seeds derived from (env_seed, episode_index)"""
    seeds = [episode_seed(env_seed, i) for i in range(episodes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            returns = list(pool.map(lambda s: rollout_return(policy, s), seeds))
    else:
        returns = [rollout_return(policy, s) for s in seeds]
    return EvaluationResult(mean_return=float(np.mean(returns)), returns=returns)


def train_target(kind: Union[str, PolicyKind], config: TrainConfig, env_seed: int, train_seed: int) -> TargetPolicy:
    """Dispatch to the trainer for `kind`"""
    from agents.a2c_agent import train_a2c
    from agents.dqn_agent import train_dqn
    from agents.ppo_agent import train_ppo

    kind = PolicyKind(kind)
    if config.kind != kind:
        raise ConfigurationError(f"Config is for {config.kind.value}, not {kind.value}")
    trainers = {PolicyKind.DQN: train_dqn, PolicyKind.A2C: train_a2c, PolicyKind.PPO: train_ppo}
    return trainers[kind](config, env_seed, train_seed)


class CompetenceMonitor:
    """
    Periodic greedy evaluation during training.

    A short evaluation runs every `eval_interval` steps; when it reaches the
    success threshold a full `final_eval_episodes` evaluation decides whether
    training can stop. The best short-evaluation policy is kept as a fallback.
    """

    def __init__(self, config: TrainConfig, env_seed: int):
        self.config = config
        self.env_seed = env_seed
        self.next_check = config.eval_interval
        self.best_policy: Optional[TargetPolicy] = None
        self.best_quick_return = -np.inf
        self.passed_policy: Optional[TargetPolicy] = None
        self.history: List[Dict[str, float]] = []

    def due(self, timestep: int) -> bool:
        if timestep >= self.next_check:
            self.next_check += self.config.eval_interval
            return True
        return False

    def check(self, policy: TargetPolicy, timestep: int) -> bool:
        quick = evaluate(policy, self.env_seed, self.config.eval_episodes)
        self.history.append({"timestep": timestep, "eval_return": quick.mean_return})
        logger.info(f"🔄 {policy.kind.value} step {timestep}: greedy eval {quick.mean_return:.1f}")
        if quick.mean_return > self.best_quick_return:
            self.best_quick_return = quick.mean_return
            self.best_policy = policy
        if quick.mean_return < self.config.success_threshold:
            return False
        full = evaluate(policy, self.env_seed, self.config.final_eval_episodes)
        if full.mean_return >= self.config.success_threshold:
            policy.final_eval_return = full.mean_return
            self.passed_policy = policy
            logger.info(f"✅ {policy.kind.value} reached {full.mean_return:.1f} at step {timestep}")
            return True
        return False

    def finish(self, final_policy: TargetPolicy, learning_curve: List[Dict[str, Any]]) -> TargetPolicy:
        """Return the passing policy or raise TrainingDidNotConverge"""
        if self.passed_policy is not None:
            return self.passed_policy
        for candidate in (final_policy, self.best_policy):
            if candidate is None:
                continue
            full = evaluate(candidate, self.env_seed, self.config.final_eval_episodes)
            if full.mean_return >= self.config.success_threshold:
                candidate.final_eval_return = full.mean_return
                return candidate
        logger.error(f"❌ {final_policy.kind.value} training did not reach {self.config.success_threshold}")
        raise TrainingDidNotConverge(
            f"{final_policy.kind.value} training did not converge within {self.config.timesteps} timesteps "
            f"(best short evaluation {self.best_quick_return:.1f})",
            learning_curve,
        )
