"""
DQN Agent
Deep Q-learning with proportional prioritized replay, a periodically synced
target network and linearly annealed epsilon-greedy exploration
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Tuple

import numpy as np

from agents.neural_core import (
    MLParams,
    adam_init,
    adam_step,
    clip_grad_norm,
    forward,
    gradient,
    init_mlp,
)
from agents.replay_buffer import PrioritizedReplayBuffer, Transition
from agents.target_policies import CompetenceMonitor, PolicyKind, TargetPolicy, TrainConfig
from environments.cartpole_env import CartPoleTask, episode_seed

logger = logging.getLogger(__name__)

TRAINING_STREAM = 1_000_000


class EpisodicTask(Protocol):
    obs_dim: int
    n_actions: int

    def reset(self) -> np.ndarray: ...

    def step(self, action: int) -> Tuple[np.ndarray, float, bool, bool]: ...


def linear_schedule(start: float, end: float, duration: float, t: int) -> float:
    if duration <= 0:
        return end
    fraction = min(float(t) / duration, 1.0)
    return start + fraction * (end - start)


def huber_grad(td_errors: np.ndarray, delta: float = 1.0) -> np.ndarray:
    return np.clip(td_errors, -delta, delta)


@dataclass
class DQNRunResult:
    q_params: MLParams
    learning_curve: List[Dict[str, Any]] = field(default_factory=list)
    timesteps: int = 0
    stopped_early: bool = False


class DQNAgent:
    """
    Q-network learner over any task exposing reset()/step().

    The same learner trains CartPole targets and the adversary in the
    augmented MDP; callers hook into episode ends and periodic checks.
    """

    def __init__(self, obs_dim: int, n_actions: int, config: TrainConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.n_actions = n_actions
        sizes = [obs_dim, *config.hidden_sizes, n_actions]
        self.q_params = init_mlp(sizes, "relu", rng)
        self.target_params = self.q_params.copy()
        self.optimizer = adam_init(self.q_params, config.learning_rate)
        self.buffer = PrioritizedReplayBuffer(
            capacity=config.replay_size,
            obs_dim=obs_dim,
            rng=rng,
            alpha=config.prioritized_alpha,
            prioritized=config.prioritized,
            priority_eps=config.prioritized_eps,
        )
        self.exploration_steps = config.exploration_fraction * config.timesteps

    def epsilon(self, t: int) -> float:
        return linear_schedule(1.0, self.config.final_exploration_prob, self.exploration_steps, t)

    def beta(self, t: int) -> float:
        return linear_schedule(self.config.prioritized_beta0, 1.0, self.config.timesteps, t)

    def select_action(self, obs: np.ndarray, t: int) -> int:
        if self.rng.random() < self.epsilon(t):
            return int(self.rng.integers(self.n_actions))
        return int(np.argmax(forward(self.q_params, obs)))

    def td_targets(self, rewards: np.ndarray, next_states: np.ndarray, dones: np.ndarray) -> np.ndarray:
        q_next_target = forward(self.target_params, next_states)
        if self.config.double_q:
            best = np.argmax(forward(self.q_params, next_states), axis=1)
            next_values = q_next_target[np.arange(len(best)), best]
        else:
            next_values = np.max(q_next_target, axis=1)
        return rewards + self.config.gamma * (1.0 - dones) * next_values

    def learn(self, t: int) -> float:
        """One minibatch Huber-loss update; returns the mean absolute TD error"""
        batch = self.buffer.sample(self.config.batch_size, beta=self.beta(t))
        rows = np.arange(len(batch.actions))
        q = forward(self.q_params, batch.states)
        targets = self.td_targets(batch.rewards, batch.next_states, batch.dones)
        td_errors = q[rows, batch.actions] - targets

        grad_out = np.zeros_like(q)
        grad_out[rows, batch.actions] = batch.weights * huber_grad(td_errors) / len(rows)
        grads = clip_grad_norm(gradient(self.q_params, batch.states, grad_out), self.config.grad_clip)
        self.q_params, self.optimizer = adam_step(self.q_params, grads, self.optimizer)
        self.buffer.update_priorities(batch.indices, td_errors)
        return float(np.mean(np.abs(td_errors)))

    def sync_target(self):
        self.target_params = self.q_params.copy()

    def run(
        self,
        task: EpisodicTask,
        timesteps: int,
        on_episode_end: Optional[Callable[[Dict[str, Any]], bool]] = None,
        on_step: Optional[Callable[[int], bool]] = None,
    ) -> DQNRunResult:
        """
        Interact with `task` for `timesteps` steps.

        `on_episode_end` receives the curve entry of each finished episode and
        `on_step` the global step; either returning True stops training.
        """
        curve: List[Dict[str, Any]] = []
        obs = task.reset()
        episode_return = 0.0
        episode_length = 0

        for t in range(timesteps):
            action = self.select_action(obs, t)
            next_obs, reward, terminal, truncated = task.step(action)
            # truncation bootstraps, failure does not
            self.buffer.add(Transition(obs, action, reward, next_obs, terminal and not truncated))
            episode_return += reward
            episode_length += 1
            obs = next_obs

            if t >= self.config.learn_start and t % self.config.train_freq == 0:
                self.learn(t)
            if t % self.config.target_update_freq == 0:
                self.sync_target()

            if terminal:
                entry = {
                    "episode": len(curve),
                    "timestep": t + 1,
                    "return": episode_return,
                    "length": episode_length,
                }
                if hasattr(task, "episode_summary"):
                    entry.update(task.episode_summary())
                curve.append(entry)
                logger.debug(f"episode {entry['episode']} return {episode_return:.1f}")
                if on_episode_end is not None and on_episode_end(entry):
                    return DQNRunResult(self.q_params, curve, t + 1, stopped_early=True)
                obs = task.reset()
                episode_return = 0.0
                episode_length = 0

            if on_step is not None and on_step(t + 1):
                return DQNRunResult(self.q_params, curve, t + 1, stopped_early=True)

        return DQNRunResult(self.q_params, curve, timesteps)


def train_dqn(config: TrainConfig, env_seed: int, train_seed: int) -> TargetPolicy:
    """Train a CartPole DQN target until it clears the competence threshold"""
    logger.info(f"🔄 Training DQN target (train_seed={train_seed}, env_seed={env_seed})")
    task = CartPoleTask(episode_seed(env_seed, TRAINING_STREAM))
    agent = DQNAgent(task.obs_dim, task.n_actions, config, np.random.default_rng(train_seed))
    monitor = CompetenceMonitor(config, env_seed)

    def snapshot() -> TargetPolicy:
        return TargetPolicy(
            kind=PolicyKind.DQN,
            value_params=agent.q_params.copy(),
            train_config=config,
            train_seed=train_seed,
            env_seed=env_seed,
            metadata={"exploration": "epsilon-greedy"},
        )

    def on_step(t: int) -> bool:
        if t < config.learn_start or not monitor.due(t):
            return False
        return monitor.check(snapshot(), t)

    result = agent.run(task, config.timesteps, on_step=on_step)
    policy = monitor.finish(snapshot(), result.learning_curve)
    policy.metadata["learning_curve"] = result.learning_curve
    policy.metadata["training_steps"] = result.timesteps
    return policy
