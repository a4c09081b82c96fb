"""
PPO Agent
Clipped-surrogate proximal policy optimization with GAE over
sequentially-stepped parallel CartPole environments
"""

import logging
from typing import Tuple

import numpy as np

from agents.actor_critic import (
    ActorCriticOptimizer,
    VectorCartPole,
    compute_gae,
    init_actor_critic,
    make_policy,
    value_loss_terms,
)
from agents.dqn_agent import TRAINING_STREAM
from agents.neural_core import entropy_logit_grad, forward, gradient, log_softmax, softmax
from agents.target_policies import CompetenceMonitor, PolicyKind, TargetPolicy, TrainConfig

logger = logging.getLogger(__name__)


def clipped_surrogate(new_log_probs: np.ndarray, old_log_probs: np.ndarray, advantages: np.ndarray,
                      clip_range: float) -> Tuple[float, np.ndarray]:
    """
    Mean of min(r A, clip(r, 1-eps, 1+eps) A) with r = exp(new - old).

    Returns the objective (to maximize) and its gradient w.r.t. new_log_probs.
    """
    ratio = np.exp(new_log_probs - old_log_probs)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * advantages
    objective = float(np.mean(np.minimum(unclipped, clipped)))
    # gradient flows only where the unclipped term is the active minimum
    active = unclipped <= clipped
    grad = np.where(active, unclipped, 0.0) / len(advantages)
    return objective, grad


def ppo_minibatch_update(policy_params, value_params, optimizer: ActorCriticOptimizer, batch, config: TrainConfig):
    """One step on -surrogate + value_coef * value loss, clipped as a whole"""
    obs, actions, old_log_probs, advantages, returns = batch
    n = len(actions)
    advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    logits = forward(policy_params, obs)
    logp_all = log_softmax(logits)
    new_log_probs = logp_all[np.arange(n), actions]
    objective, grad_logp = clipped_surrogate(new_log_probs, old_log_probs, advantages, config.clip_range)

    # d(-objective)/dlogits through log pi(a) = onehot - pi
    probs = softmax(logits)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), actions] = 1.0
    logit_grad = -grad_logp[:, None] * (onehot - probs)
    if config.entropy_coef != 0.0:
        logit_grad = logit_grad - config.entropy_coef * entropy_logit_grad(logits) / n

    values = forward(value_params, obs)[:, 0]
    v_loss, value_grad = value_loss_terms(values, returns, config.value_coef)

    policy_params, value_params, optimizer = optimizer.step(
        policy_params, value_params,
        gradient(policy_params, obs, logit_grad), gradient(value_params, obs, value_grad),
        config.max_grad_norm,
    )
    return policy_params, value_params, optimizer, objective, v_loss


def train_ppo(config: TrainConfig, env_seed: int, train_seed: int) -> TargetPolicy:
    logger.info(f"🔄 Training PPO target (train_seed={train_seed}, env_seed={env_seed})")
    rng = np.random.default_rng(train_seed)
    envs = VectorCartPole(config.n_envs, env_seed, TRAINING_STREAM)
    obs_dim, n_actions = envs.tasks[0].obs_dim, envs.tasks[0].n_actions
    policy_params, value_params = init_actor_critic(obs_dim, n_actions, config, rng)
    optimizer = ActorCriticOptimizer.create(policy_params, value_params, config.learning_rate)
    monitor = CompetenceMonitor(config, env_seed)
    batch_size = config.n_envs * config.rollout_len
    minibatch_size = batch_size // config.minibatches

    while envs.steps < config.timesteps:
        rollout = envs.collect(policy_params, value_params, config.rollout_len, config.gamma, rng)
        advantages = compute_gae(rollout.rewards, rollout.values, rollout.dones, rollout.last_values,
                                 config.gamma, config.gae_lambda)
        returns = advantages + rollout.values

        obs = rollout.obs.reshape(batch_size, -1)
        flat = (rollout.actions.ravel(), rollout.log_probs.ravel(), advantages.ravel(), returns.ravel())
        for _ in range(config.surrogate_epochs):
            order = rng.permutation(batch_size)
            for start in range(0, batch_size, minibatch_size):
                idx = order[start:start + minibatch_size]
                batch = (obs[idx], flat[0][idx], flat[1][idx], flat[2][idx], flat[3][idx])
                policy_params, value_params, optimizer, _, _ = ppo_minibatch_update(
                    policy_params, value_params, optimizer, batch, config
                )

        if monitor.due(envs.steps):
            candidate = make_policy(PolicyKind.PPO, policy_params, value_params, config, env_seed, train_seed)
            if monitor.check(candidate, envs.steps):
                break

    final = make_policy(PolicyKind.PPO, policy_params, value_params, config, env_seed, train_seed)
    policy = monitor.finish(final, envs.completed)
    policy.metadata.update({
        "learning_curve": envs.completed,
        "training_steps": envs.steps,
        "clip_range": config.clip_range,
    })
    return policy
