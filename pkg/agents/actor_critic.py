"""
Actor-Critic Helpers
Vectorized CartPole rollouts and the loss/gradient pieces shared by A2C and PPO
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from agents.neural_core import (
    AdamState,
    MLParams,
    adam_init,
    adam_step,
    clip_joint_grad_norm,
    entropy,
    entropy_logit_grad,
    forward,
    init_mlp,
    log_softmax,
    softmax,
)
from agents.target_policies import PolicyKind, TargetPolicy, TrainConfig
from environments.cartpole_env import CartPoleTask, episode_seed

logger = logging.getLogger(__name__)


def init_actor_critic(obs_dim: int, n_actions: int, config: TrainConfig, rng: np.random.Generator) -> Tuple[MLParams, MLParams]:
    """Separate tanh policy and value networks; small policy output keeps the initial distribution near uniform"""
    policy_params = init_mlp([obs_dim, *config.hidden_sizes, n_actions], "tanh", rng, output_scale=0.01)
    value_params = init_mlp([obs_dim, *config.hidden_sizes, 1], "tanh", rng)
    return policy_params, value_params


@dataclass
class ActorCriticOptimizer:
    """
    One Adam optimizer over both networks.

    The policy and value losses are summed into one objective and their
    gradients are clipped together, so `value_coef` sets the value share of
    the joint gradient norm.
    """
    policy: AdamState
    value: AdamState

    @classmethod
    def create(cls, policy_params: MLParams, value_params: MLParams, learning_rate: float) -> "ActorCriticOptimizer":
        return cls(adam_init(policy_params, learning_rate), adam_init(value_params, learning_rate))

    @property
    def timestep(self) -> int:
        return self.policy.timestep

    def step(self, policy_params: MLParams, value_params: MLParams, policy_grads: MLParams,
             value_grads: MLParams, max_grad_norm: Optional[float]) -> Tuple[MLParams, MLParams, "ActorCriticOptimizer"]:
        policy_grads, value_grads = clip_joint_grad_norm([policy_grads, value_grads], max_grad_norm)
        policy_params, policy_state = adam_step(policy_params, policy_grads, self.policy)
        value_params, value_state = adam_step(value_params, value_grads, self.value)
        return policy_params, value_params, ActorCriticOptimizer(policy_state, value_state)


def make_policy(kind: PolicyKind, policy_params: MLParams, value_params: MLParams, config: TrainConfig,
                env_seed: int, train_seed: int) -> TargetPolicy:
    return TargetPolicy(
        kind=kind,
        value_params=value_params.copy(),
        policy_params=policy_params.copy(),
        train_config=config,
        train_seed=train_seed,
        env_seed=env_seed,
    )


@dataclass
class Rollout:
    """Arrays shaped (T, n_envs) plus the bootstrap values after the last step"""
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    last_values: np.ndarray


class VectorCartPole:
    """
    `n_envs` CartPole tasks stepped one after another (vector semantics, one thread).

    Finished environments reset automatically; a truncated episode folds
    gamma * V(final observation) into its last reward so it can be treated as done.
    """

    def __init__(self, n_envs: int, env_seed: int, stream: int):
        self.tasks = [CartPoleTask(episode_seed(env_seed, stream + i)) for i in range(n_envs)]
        self.obs = np.stack([task.reset() for task in self.tasks])
        self.episode_returns = np.zeros(n_envs)
        self.completed: List[Dict[str, Any]] = []
        self.steps = 0

    @property
    def n_envs(self) -> int:
        return len(self.tasks)

    def collect(self, policy_params: MLParams, value_params: MLParams, rollout_len: int,
                gamma: float, rng: np.random.Generator) -> Rollout:
        n = self.n_envs
        obs_buf = np.zeros((rollout_len, n, self.obs.shape[1]))
        actions = np.zeros((rollout_len, n), dtype=np.int64)
        rewards = np.zeros((rollout_len, n))
        dones = np.zeros((rollout_len, n))
        values = np.zeros((rollout_len, n))
        log_probs = np.zeros((rollout_len, n))

        for t in range(rollout_len):
            logits = forward(policy_params, self.obs)
            probs = softmax(logits)
            step_actions = (rng.random(n)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
            step_actions = np.minimum(step_actions, probs.shape[1] - 1)
            obs_buf[t] = self.obs
            actions[t] = step_actions
            values[t] = forward(value_params, self.obs)[:, 0]
            log_probs[t] = log_softmax(logits)[np.arange(n), step_actions]

            for i, task in enumerate(self.tasks):
                next_obs, reward, terminal, truncated = task.step(int(step_actions[i]))
                self.episode_returns[i] += reward
                if truncated:
                    reward += gamma * float(forward(value_params, next_obs)[0])
                rewards[t, i] = reward
                dones[t, i] = float(terminal)
                if terminal:
                    self.completed.append({
                        "episode": len(self.completed),
                        "timestep": self.steps + (t + 1) * n,
                        "return": float(self.episode_returns[i]),
                    })
                    logger.debug(f"Env {i} finished episode {len(self.completed) - 1} "
                                 f"with return {self.episode_returns[i]:.0f}")
                    self.episode_returns[i] = 0.0
                    next_obs = task.reset()
                self.obs[i] = next_obs

        self.steps += rollout_len * n
        last_values = forward(value_params, self.obs)[:, 0]
        return Rollout(obs_buf, actions, rewards, dones, values, log_probs, last_values)


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                last_values: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates over (T, n_envs) arrays"""
    T = rewards.shape[0]
    advantages = np.zeros_like(rewards)
    running = np.zeros_like(last_values, dtype=np.float64)
    for t in reversed(range(T)):
        next_values = last_values if t == T - 1 else values[t + 1]
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * not_done - values[t]
        running = delta + gamma * lam * not_done * running
        advantages[t] = running
    return advantages


def discounted_returns(rewards: np.ndarray, dones: np.ndarray, last_values: np.ndarray, gamma: float) -> np.ndarray:
    """n-step bootstrapped returns over (T, n_envs) arrays"""
    returns = np.zeros_like(rewards)
    running = np.asarray(last_values, dtype=np.float64).copy()
    for t in reversed(range(rewards.shape[0])):
        running = rewards[t] + gamma * (1.0 - dones[t]) * running
        returns[t] = running
    return returns


def policy_gradient_terms(logits: np.ndarray, actions: np.ndarray, advantages: np.ndarray,
                          entropy_coef: float) -> Tuple[float, np.ndarray]:
    """Loss -mean(A log pi(a)) - c_H mean(H) and its gradient w.r.t. logits"""
    n = len(actions)
    probs = softmax(logits)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), actions] = 1.0
    logp = log_softmax(logits)[np.arange(n), actions]

    loss = -float(np.mean(advantages * logp)) - entropy_coef * float(np.mean(entropy(logits)))
    grad = -(onehot - probs) * advantages[:, None] / n
    if entropy_coef != 0.0:
        grad = grad - entropy_coef * entropy_logit_grad(logits) / n
    return loss, grad


def value_loss_terms(values: np.ndarray, returns: np.ndarray, value_coef: float) -> Tuple[float, np.ndarray]:
    """Loss c_V mean((V - R)^2) and its gradient w.r.t. the value outputs, shaped (n, 1)"""
    diff = values - returns
    loss = value_coef * float(np.mean(diff ** 2))
    grad = (2.0 * value_coef * diff / len(diff))[:, None]
    return loss, grad
