import numpy as np
import pytest

from agents.a2c_agent import a2c_update
from agents.actor_critic import (
    ActorCriticOptimizer,
    VectorCartPole,
    compute_gae,
    discounted_returns,
    init_actor_critic,
    policy_gradient_terms,
    value_loss_terms,
)
from agents.neural_core import forward, softmax
from agents.ppo_agent import clipped_surrogate, ppo_minibatch_update
from agents.target_policies import TrainConfig


def test_gae_with_unit_lambda_is_monte_carlo_minus_baseline():
    """With gamma = lambda = 1 the advantage is the remaining return minus V"""
    T = 10
    rewards = np.ones((T, 1))
    dones = np.zeros((T, 1))
    dones[-1] = 1.0
    values = np.random.default_rng(0).normal(size=(T, 1))
    advantages = compute_gae(rewards, values, dones, np.array([123.0]), gamma=1.0, lam=1.0)
    expected = (T - np.arange(T))[:, None] - values
    np.testing.assert_allclose(advantages, expected)


def test_gae_with_zero_lambda_is_one_step_td():
    rewards = np.array([[1.0], [1.0]])
    values = np.array([[2.0], [3.0]])
    advantages = compute_gae(rewards, values, np.zeros((2, 1)), np.array([4.0]), gamma=0.5, lam=0.0)
    np.testing.assert_allclose(advantages, [[1.0 + 0.5 * 3.0 - 2.0], [1.0 + 0.5 * 4.0 - 3.0]])


def test_discounted_returns_bootstrap_and_reset():
    rewards = np.ones((2, 2))
    dones = np.array([[0.0, 1.0], [0.0, 0.0]])
    returns = discounted_returns(rewards, dones, np.array([4.0, 4.0]), gamma=0.5)
    np.testing.assert_allclose(returns[:, 0], [2.5, 3.0])
    np.testing.assert_allclose(returns[:, 1], [1.0, 3.0])


def test_surrogate_at_unit_ratio():
    """Identical old and new log-probabilities give mean(A) and gradient A / n"""
    logp = np.log(np.array([0.3, 0.6, 0.5]))
    adv = np.array([1.0, -2.0, 0.5])
    objective, grad = clipped_surrogate(logp, logp, adv, clip_range=0.2)
    assert objective == pytest.approx(np.mean(adv))
    np.testing.assert_allclose(grad, adv / 3)


def test_surrogate_clips_only_the_favourable_side():
    """Doubling the ratio is clipped for A > 0 and left alone for A < 0"""
    old = np.zeros(2)
    new = np.full(2, np.log(2.0))
    objective, grad = clipped_surrogate(new, old, np.array([1.0, -1.0]), clip_range=0.2)
    assert objective == pytest.approx((1.2 - 2.0) / 2)
    np.testing.assert_allclose(grad, [0.0, -1.0])


def test_zero_entropy_coefficient_contributes_nothing():
    logits = np.array([[0.2, -0.4], [1.0, 1.5]])
    actions = np.array([1, 0])
    adv = np.array([0.7, -1.3])
    _, grad = policy_gradient_terms(logits, actions, adv, entropy_coef=0.0)
    onehot = np.eye(2)[actions]
    np.testing.assert_array_equal(grad, -(onehot - softmax(logits)) * adv[:, None] / 2)


def test_zero_advantage_gives_zero_policy_gradient():
    logits = np.array([[0.2, -0.4]])
    loss, grad = policy_gradient_terms(logits, np.array([0]), np.zeros(1), entropy_coef=0.0)
    assert loss == pytest.approx(0.0)
    np.testing.assert_array_equal(grad, np.zeros((1, 2)))


def test_policy_gradient_matches_finite_differences():
    logits = np.array([[0.2, -0.4], [1.0, 1.5], [-0.3, 0.0]])
    actions = np.array([1, 0, 1])
    adv = np.array([0.7, -1.3, 2.0])
    _, grad = policy_gradient_terms(logits, actions, adv, entropy_coef=0.01)
    eps = 1e-6
    for i in range(3):
        for j in range(2):
            plus, minus = logits.copy(), logits.copy()
            plus[i, j] += eps
            minus[i, j] -= eps
            numeric = (policy_gradient_terms(plus, actions, adv, 0.01)[0]
                       - policy_gradient_terms(minus, actions, adv, 0.01)[0]) / (2 * eps)
            assert grad[i, j] == pytest.approx(numeric, rel=1e-5, abs=1e-9)


def test_value_loss_terms():
    loss, grad = value_loss_terms(np.array([1.0, 2.0]), np.zeros(2), value_coef=0.5)
    assert loss == pytest.approx(1.25)
    np.testing.assert_allclose(grad, [[0.5], [1.0]])


def test_vector_rollout_shapes_and_step_count():
    config = TrainConfig.for_kind("a2c")
    rng = np.random.default_rng(0)
    policy_params, value_params = init_actor_critic(4, 2, config, rng)
    envs = VectorCartPole(3, env_seed=0, stream=0)
    rollout = envs.collect(policy_params, value_params, rollout_len=7, gamma=0.99, rng=rng)

    assert rollout.obs.shape == (7, 3, 4)
    assert rollout.actions.shape == rollout.rewards.shape == rollout.log_probs.shape == (7, 3)
    assert rollout.last_values.shape == (3,)
    assert set(np.unique(rollout.actions)) <= {0, 1}
    assert np.all(rollout.log_probs <= 0.0)
    assert envs.steps == 21


def test_initial_policy_is_near_uniform():
    config = TrainConfig.for_kind("ppo")
    policy_params, _ = init_actor_critic(4, 2, config, np.random.default_rng(1))
    probs = softmax(forward(policy_params, np.random.default_rng(2).normal(size=(16, 4)) * 0.05))
    np.testing.assert_allclose(probs, 0.5, atol=0.01)


def test_a2c_update_moves_both_networks():
    config = TrainConfig.for_kind("a2c", n_envs=2, rollout_len=5)
    rng = np.random.default_rng(4)
    policy_params, value_params = init_actor_critic(4, 2, config, rng)
    envs = VectorCartPole(2, env_seed=1, stream=0)
    rollout = envs.collect(policy_params, value_params, 5, config.gamma, rng)
    optimizer = ActorCriticOptimizer.create(policy_params, value_params, config.learning_rate)
    new_policy, new_value, optimizer, losses = a2c_update(policy_params, value_params, optimizer, rollout, config)
    assert optimizer.timestep == 1
    assert np.isfinite(losses["policy_loss"]) and losses["value_loss"] > 0.0
    assert losses["loss"] == losses["policy_loss"] + losses["value_loss"]
    assert not np.array_equal(new_value.biases[-1], value_params.biases[-1])
    assert new_policy.is_finite()


def _a2c_updates(value_coef: float, n_updates: int = 5):
    config = TrainConfig.for_kind("a2c", n_envs=2, rollout_len=5, value_coef=value_coef)
    rng = np.random.default_rng(4)
    policy_params, value_params = init_actor_critic(4, 2, config, rng)
    optimizer = ActorCriticOptimizer.create(policy_params, value_params, config.learning_rate)
    envs = VectorCartPole(2, env_seed=1, stream=0)
    for _ in range(n_updates):
        rollout = envs.collect(policy_params, value_params, 5, config.gamma, rng)
        policy_params, value_params, optimizer, _ = a2c_update(policy_params, value_params, optimizer, rollout, config)
    return policy_params, value_params


def test_value_coefficient_changes_the_a2c_updates():
    """Both heads share one clipped gradient norm, so the value weight shifts every step"""
    policy_low, value_low = _a2c_updates(0.25)
    policy_high, value_high = _a2c_updates(1.0)
    policy_diff = max(np.max(np.abs(a - b)) for a, b in zip(policy_low.arrays(), policy_high.arrays()))
    value_diff = max(np.max(np.abs(a - b)) for a, b in zip(value_low.arrays(), value_high.arrays()))
    assert policy_diff > 0.0
    assert value_diff > 0.0


def test_value_coefficient_changes_the_ppo_policy_step():
    """Large value errors put the joint clip in play, so the value weight reaches the policy"""
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(8, 4)) * 0.05
    batch = (obs, np.array([0, 1] * 4), np.full(8, np.log(0.5)), np.linspace(-1.0, 1.0, 8), np.full(8, 1000.0))

    def policy_after(value_coef):
        config = TrainConfig.for_kind("ppo", value_coef=value_coef)
        policy_params, value_params = init_actor_critic(4, 2, config, np.random.default_rng(1))
        optimizer = ActorCriticOptimizer.create(policy_params, value_params, config.learning_rate)
        for _ in range(5):
            policy_params, value_params, optimizer, _, _ = ppo_minibatch_update(
                policy_params, value_params, optimizer, batch, config
            )
        assert optimizer.timestep == 5
        return policy_params

    low, high = policy_after(0.25), policy_after(1.0)
    assert any(not np.array_equal(a, b) for a, b in zip(low.arrays(), high.arrays()))
