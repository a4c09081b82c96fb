"""
A2C Agent
Synchronous advantage actor-critic with n-step bootstrapped returns
"""

import logging

import numpy as np

from agents.actor_critic import (
    ActorCriticOptimizer,
    VectorCartPole,
    discounted_returns,
    init_actor_critic,
    make_policy,
    policy_gradient_terms,
    value_loss_terms,
)
from agents.dqn_agent import TRAINING_STREAM
from agents.neural_core import forward, gradient
from agents.target_policies import CompetenceMonitor, PolicyKind, TargetPolicy, TrainConfig

logger = logging.getLogger(__name__)


def a2c_update(policy_params, value_params, optimizer: ActorCriticOptimizer, rollout, config: TrainConfig):
    """One actor-critic step on the joint loss over a flattened rollout"""
    returns = discounted_returns(rollout.rewards, rollout.dones, rollout.last_values, config.gamma).ravel()
    obs = rollout.obs.reshape(-1, rollout.obs.shape[-1])
    actions = rollout.actions.ravel()

    logits = forward(policy_params, obs)
    values = forward(value_params, obs)[:, 0]
    advantages = returns - values

    pg_loss, logit_grad = policy_gradient_terms(logits, actions, advantages, config.entropy_coef)
    v_loss, value_grad = value_loss_terms(values, returns, config.value_coef)

    policy_params, value_params, optimizer = optimizer.step(
        policy_params, value_params,
        gradient(policy_params, obs, logit_grad), gradient(value_params, obs, value_grad),
        config.max_grad_norm,
    )
    losses = {"policy_loss": pg_loss, "value_loss": v_loss, "loss": pg_loss + v_loss}
    return policy_params, value_params, optimizer, losses


def train_a2c(config: TrainConfig, env_seed: int, train_seed: int) -> TargetPolicy:
    logger.info(f"🔄 Training A2C target (train_seed={train_seed}, env_seed={env_seed})")
    rng = np.random.default_rng(train_seed)
    envs = VectorCartPole(config.n_envs, env_seed, TRAINING_STREAM)
    obs_dim, n_actions = envs.tasks[0].obs_dim, envs.tasks[0].n_actions
    policy_params, value_params = init_actor_critic(obs_dim, n_actions, config, rng)
    optimizer = ActorCriticOptimizer.create(policy_params, value_params, config.learning_rate)
    monitor = CompetenceMonitor(config, env_seed)

    while envs.steps < config.timesteps:
        rollout = envs.collect(policy_params, value_params, config.rollout_len, config.gamma, rng)
        policy_params, value_params, optimizer, _ = a2c_update(policy_params, value_params, optimizer, rollout, config)
        if monitor.due(envs.steps):
            candidate = make_policy(PolicyKind.A2C, policy_params, value_params, config, env_seed, train_seed)
            if monitor.check(candidate, envs.steps):
                break

    final = make_policy(PolicyKind.A2C, policy_params, value_params, config, env_seed, train_seed)
    policy = monitor.finish(final, envs.completed)
    policy.metadata.update({"learning_curve": envs.completed, "training_steps": envs.steps, "rollout_len": config.rollout_len})
    return policy
