"""
Q* Extraction Service
Per-action value functions for target policies: read directly from a DQN,
by one-step lookahead through the simulator for value-head policies, or by
imitating a black-box policy and evaluating the clone
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from agents.neural_core import (
    MLParams,
    adam_init,
    adam_step,
    forward,
    gradient,
    init_mlp,
    params_from_dict,
    params_to_dict,
    softmax,
)
from agents.target_policies import PolicyKind, TargetPolicy, act
from environments.cartpole_env import CartPoleEnv, EnvState, episode_seed
from services.errors import ConfigurationError, ContractViolation, ImitationFailed, SchemaError

logger = logging.getLogger(__name__)

Q_ARTIFACT_SCHEMA_VERSION = 1


class QSource(str, Enum):
    DIRECT = "direct"
    VALUE_LOOKAHEAD = "value_lookahead"
    IMITATED = "imitated"


class ImitationConfig(BaseModel):
    """Data budget and stopping rule for the black-box imitation pipeline"""
    transitions: int = Field(default=20000, ge=0)
    holdout_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    agreement_threshold: float = Field(default=0.95, gt=0.0, le=1.0)
    max_epochs: int = Field(default=60, gt=0)
    batch_size: int = Field(default=256, gt=0)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    hidden_sizes: List[int] = Field(default_factory=lambda: [64, 64])
    td_updates: int = Field(default=20000, ge=0)
    td_batch_size: int = Field(default=256, gt=0)
    td_target_sync: int = Field(default=500, gt=0)
    seed: int = 0


@dataclass
class QFunction:
    """
    Q(s, a) for every action at every queried state.

    `evaluator` maps an EnvState to the vector of per-action values; lookahead
    needs the full simulator state, the other sources only read its observation.
    """
    source: QSource
    evaluator: Callable[[EnvState], np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)
    params: Optional[MLParams] = None

    def values(self, state: EnvState) -> np.ndarray:
        return np.asarray(self.evaluator(state), dtype=np.float64)

    def value(self, state: EnvState, action: int) -> float:
        return float(self.values(state)[action])

    def induced_action(self, state: EnvState, greedy_action: Optional[int] = None) -> int:
        """
        Worst action argmin_a Q(s, a) among the actions other than `greedy_action`.

        Ties go to the lowest index.
        """
        values = self.values(state).copy()
        if greedy_action is not None and len(values) > 1:
            values[greedy_action] = np.inf
        return int(np.argmin(values))


# ============================================================================
# Direct and lookahead extraction
# ============================================================================

def q_direct(target: TargetPolicy) -> QFunction:
    if target.kind != PolicyKind.DQN:
        raise ConfigurationError(f"Direct Q extraction needs a DQN target, got {target.kind.value}")
    return QFunction(
        source=QSource.DIRECT,
        evaluator=lambda state: target.q_values(state.observation),
        metadata={"target_id": target.policy_id},
    )


def q_from_value(target: TargetPolicy, env: CartPoleEnv, state: EnvState) -> np.ndarray:
    """
    One-step lookahead Q(s, a) = r(s, a) + gamma * V(s') through the simulator.

    Terminal successors (failure or truncation) contribute V = 0.
    """
    if target.kind == PolicyKind.DQN:
        raise ConfigurationError("Value lookahead needs a policy with a state-value head")
    if state.terminal:
        raise ContractViolation("Cannot look ahead from a terminal state")

    gamma = target.train_config.gamma
    snapshot = env.snapshot(state)
    q = np.zeros(env.n_actions)
    for action in range(env.n_actions):
        next_state, result = env.step(env.restore(snapshot), action)
        bootstrap = 0.0 if result.terminal else target.state_value(next_state.observation)
        q[action] = result.reward + gamma * bootstrap
    return q


def q_lookahead(target: TargetPolicy, env: Optional[CartPoleEnv] = None) -> QFunction:
    env = env or CartPoleEnv()
    if target.kind == PolicyKind.DQN:
        raise ConfigurationError("Value lookahead needs a policy with a state-value head")
    return QFunction(
        source=QSource.VALUE_LOOKAHEAD,
        evaluator=lambda state: q_from_value(target, env, state),
        metadata={"target_id": target.policy_id, "gamma": target.train_config.gamma, "model": "simulator"},
    )


# ============================================================================
# Imitation
# ============================================================================

@dataclass
class ImitationDataset:
    """Greedy-target states plus one simulated branch per (state, action)"""
    states: np.ndarray
    target_actions: np.ndarray
    branch_states: np.ndarray
    branch_actions: np.ndarray
    branch_rewards: np.ndarray
    branch_next_states: np.ndarray
    branch_dones: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


def collect_imitation_data(target: TargetPolicy, env: CartPoleEnv, config: ImitationConfig) -> ImitationDataset:
    """
    Roll the greedy target for `config.transitions` steps and branch every
    visited state on each action. Only failures end a branch; the
    observation carries no clock, so truncation is bootstrapped.
    """
    states, target_actions = [], []
    branches: List[tuple] = []
    episode = 0
    while len(states) < config.transitions:
        state = env.reset(episode_seed(config.seed, episode))
        episode += 1
        while not state.terminal and len(states) < config.transitions:
            obs = state.observation
            action = act(target, obs, greedy=True)
            states.append(obs)
            target_actions.append(action)
            for branch_action in range(env.n_actions):
                next_state, result = env.step(env.restore(state), branch_action)
                failed = result.terminal and not result.truncated
                branches.append((obs, branch_action, result.reward, next_state.observation, float(failed)))
            state, _ = env.step(state, action)

    obs_dim = env.obs_dim
    if not branches:
        empty = np.zeros((0, obs_dim))
        return ImitationDataset(empty, np.zeros(0, dtype=np.int64), empty, np.zeros(0, dtype=np.int64),
                                np.zeros(0), empty, np.zeros(0))
    b_states, b_actions, b_rewards, b_next, b_dones = zip(*branches)
    return ImitationDataset(
        states=np.array(states),
        target_actions=np.array(target_actions, dtype=np.int64),
        branch_states=np.array(b_states),
        branch_actions=np.array(b_actions, dtype=np.int64),
        branch_rewards=np.array(b_rewards),
        branch_next_states=np.array(b_next),
        branch_dones=np.array(b_dones),
    )


def clone_policy(dataset: ImitationDataset, n_actions: int, config: ImitationConfig,
                 rng: np.random.Generator) -> tuple:
    """
    Behavioral cloning by minibatch cross-entropy.

    Returns (classifier params, held-out agreement per epoch); stops as soon
    as the held-out agreement reaches the threshold.
    """
    n = len(dataset)
    order = rng.permutation(n)
    n_holdout = int(n * config.holdout_fraction)
    holdout, train = order[:n_holdout], order[n_holdout:]
    if n_holdout == 0:
        holdout = train

    x, y = dataset.states, dataset.target_actions
    params = init_mlp([x.shape[1], *config.hidden_sizes, n_actions], "tanh", rng)
    optimizer = adam_init(params, config.learning_rate)
    agreement_curve: List[float] = []

    for epoch in range(config.max_epochs):
        shuffled = rng.permutation(train)
        for start in range(0, len(shuffled), config.batch_size):
            idx = shuffled[start:start + config.batch_size]
            probs = softmax(forward(params, x[idx]))
            onehot = np.zeros_like(probs)
            onehot[np.arange(len(idx)), y[idx]] = 1.0
            grads = gradient(params, x[idx], (probs - onehot) / len(idx))
            params, optimizer = adam_step(params, grads, optimizer)

        predicted = np.argmax(forward(params, x[holdout]), axis=1)
        agreement = float(np.mean(predicted == y[holdout]))
        agreement_curve.append(agreement)
        logger.debug(f"imitation epoch {epoch}: held-out agreement {agreement:.3f}")
        if agreement >= config.agreement_threshold:
            break
    return params, agreement_curve


def evaluate_clone(dataset: ImitationDataset, clone: MLParams, n_actions: int, gamma: float,
                   config: ImitationConfig, rng: np.random.Generator) -> MLParams:
    """TD(0) policy evaluation of the clone over the branched transitions"""
    q_params = init_mlp([dataset.branch_states.shape[1], *config.hidden_sizes, n_actions], "relu", rng)
    target_params = q_params.copy()
    optimizer = adam_init(q_params, config.learning_rate)
    next_actions = np.argmax(forward(clone, dataset.branch_next_states), axis=1)
    n = len(dataset.branch_actions)

    for update in range(config.td_updates):
        if update % config.td_target_sync == 0:
            target_params = q_params.copy()
        idx = rng.integers(0, n, size=min(config.td_batch_size, n))
        rows = np.arange(len(idx))
        next_q = forward(target_params, dataset.branch_next_states[idx])[rows, next_actions[idx]]
        targets = dataset.branch_rewards[idx] + gamma * (1.0 - dataset.branch_dones[idx]) * next_q
        q = forward(q_params, dataset.branch_states[idx])
        td_errors = q[rows, dataset.branch_actions[idx]] - targets
        grad_out = np.zeros_like(q)
        grad_out[rows, dataset.branch_actions[idx]] = np.clip(td_errors, -1.0, 1.0) / len(idx)
        q_params, optimizer = adam_step(q_params, gradient(q_params, dataset.branch_states[idx], grad_out), optimizer)
    return q_params


def imitate_q(target: TargetPolicy, env: Optional[CartPoleEnv] = None,
              config: Optional[ImitationConfig] = None) -> QFunction:
    """Approximate Q from black-box access to act(target, .) only"""
    env = env or CartPoleEnv()
    config = config or ImitationConfig()
    rng = np.random.default_rng(config.seed)
    logger.info(f"🔄 Imitating {target.policy_id} from {config.transitions} transitions")

    if config.transitions == 0:
        raise ImitationFailed("Imitation needs at least one transition, got 0", [])

    dataset = collect_imitation_data(target, env, config)
    clone, agreement_curve = clone_policy(dataset, env.n_actions, config, rng)
    final_agreement = agreement_curve[-1] if agreement_curve else 0.0
    if final_agreement < config.agreement_threshold:
        logger.error(f"❌ Clone of {target.policy_id} reached only {final_agreement:.3f} agreement")
        raise ImitationFailed(
            f"Held-out agreement {final_agreement:.3f} below {config.agreement_threshold} "
            f"after {len(agreement_curve)} epochs",
            agreement_curve,
        )

    q_params = evaluate_clone(dataset, clone, env.n_actions, target.train_config.gamma, config, rng)
    logger.info(f"✅ Imitated Q for {target.policy_id} (agreement {final_agreement:.3f})")
    return _imitated_qfunction(q_params, {
        "target_id": target.policy_id,
        "agreement": final_agreement,
        "agreement_curve": agreement_curve,
        "imitation_config": config.model_dump(mode="json"),
        "note": "policy evaluation of the clone, not an optimal Q",
    })


def _imitated_qfunction(q_params: MLParams, metadata: Dict[str, Any]) -> QFunction:
    return QFunction(
        source=QSource.IMITATED,
        evaluator=lambda state: forward(q_params, state.observation),
        metadata=metadata,
        params=q_params,
    )


def extract_q(target: TargetPolicy, source: Union[str, QSource, None] = "auto",
              env: Optional[CartPoleEnv] = None,
              imitation_config: Optional[ImitationConfig] = None) -> QFunction:
    """Pick the extraction route; `auto` reads DQN values directly and looks ahead otherwise"""
    if source in (None, "auto"):
        source = QSource.DIRECT if target.kind == PolicyKind.DQN else QSource.VALUE_LOOKAHEAD
    source = QSource(source)
    if source == QSource.DIRECT:
        return q_direct(target)
    if source == QSource.VALUE_LOOKAHEAD:
        return q_lookahead(target, env)
    return imitate_q(target, env, imitation_config)


# ============================================================================
# Artifacts and rollouts
# ============================================================================

def save_qfunction(qfn: QFunction, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": Q_ARTIFACT_SCHEMA_VERSION,
        "source": qfn.source.value,
        "metadata": qfn.metadata,
        "params": params_to_dict(qfn.params) if qfn.params is not None else None,
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=2))
    logger.info(f"✅ Saved {qfn.source.value} Q artifact to {path}")
    return path


def load_qfunction(path: Union[str, Path], target: TargetPolicy, env: Optional[CartPoleEnv] = None) -> QFunction:
    """Rebuild a saved Q function; it must have been extracted from `target`"""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"Q artifact {path} is not valid JSON: {e}")
    version = data.get("schema_version")
    if version != Q_ARTIFACT_SCHEMA_VERSION:
        raise SchemaError(f"Q artifact schema {version} is not supported",
                          found=version, expected=Q_ARTIFACT_SCHEMA_VERSION)

    target_id = data.get("metadata", {}).get("target_id")
    if target_id != target.policy_id:
        raise ConfigurationError(f"Q artifact was extracted from {target_id}, not {target.policy_id}")

    source = QSource(data["source"])
    if source == QSource.IMITATED:
        return _imitated_qfunction(params_from_dict(data["params"]), data["metadata"])
    return extract_q(target, source, env)


def q_value_rollout(target: TargetPolicy, qfn: QFunction, seed: int,
                   env: Optional[CartPoleEnv] = None) -> pd.DataFrame:
    """Q values, greedy action and induced action along one greedy target episode"""
    env = env or CartPoleEnv()
    state = env.reset(seed)
    rows = []
    while not state.terminal:
        q = qfn.values(state)
        greedy = act(target, state.observation, greedy=True)
        row = {"timestep": state.step_count}
        row.update({f"q_{a}": float(v) for a, v in enumerate(q)})
        row.update({"greedy_action": greedy, "induced_action": qfn.induced_action(state, greedy)})
        rows.append(row)
        state, _ = env.step(state, greedy)
    return pd.DataFrame(rows)


# ============================================================================
# Service
# ============================================================================

class QStarService:
    """Resolves the Q function a benchmark perturbs through and exports it for inspection"""

    def __init__(self, imitation_config: Optional[ImitationConfig] = None, env: Optional[CartPoleEnv] = None):
        self.imitation_config = imitation_config or ImitationConfig()
        self.env = env or CartPoleEnv()

    def resolve(self, target: TargetPolicy, source: Union[str, QSource, None] = "auto",
                artifact: Optional[Union[str, Path]] = None) -> QFunction:
        """A saved artifact wins over extraction"""
        if artifact is not None:
            qfn = load_qfunction(artifact, target, self.env)
            logger.info(f"🔄 Loaded {qfn.source.value} Q for {target.policy_id} from {artifact}")
            return qfn
        return extract_q(target, source, self.env, self.imitation_config)

    def export(self, target: TargetPolicy, qfn: QFunction, output_dir: Union[str, Path],
               seed: int) -> pd.DataFrame:
        """Write `<policy_id>_q.json` and the greedy-rollout Q CSV next to it"""
        output_dir = Path(output_dir)
        save_qfunction(qfn, output_dir / f"{target.policy_id}_q.json")
        rollout = q_value_rollout(target, qfn, seed, self.env)
        rollout.to_csv(output_dir / f"{target.policy_id}_q_rollout.csv", index=False)
        return rollout
