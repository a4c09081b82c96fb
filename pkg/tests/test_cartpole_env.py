import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from environments.cartpole_env import (
    MAX_EPISODE_STEPS,
    CartPoleEnv,
    CartPoleTask,
    EnvState,
    episode_seed,
)
from services.errors import ContractViolation


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_reset_stays_in_initial_range(seed):
    """Every reset component is drawn from [-0.05, 0.05]"""
    state = CartPoleEnv().reset(seed)
    assert np.all(np.abs(state.observation) <= 0.05)
    assert state.step_count == 0
    assert not state.terminal


def test_reset_is_deterministic(env):
    """Same seed, same initial state"""
    assert env.reset(7) == env.reset(7)
    assert env.reset(7) != env.reset(8)


def test_step_from_rest_matches_hand_computation(env):
    """One push to the right from the upright rest state"""
    state, result = env.step(EnvState(0.0, 0.0, 0.0, 0.0), 1)
    assert state.cart_velocity == pytest.approx(0.19512195, rel=1e-6)
    assert state.cart_position == pytest.approx(0.0039024390, rel=1e-6)
    assert state.pole_tip_velocity == pytest.approx(-0.29268293, rel=1e-6)
    assert state.pole_angle == pytest.approx(-0.0058536585, rel=1e-6)
    assert result.reward == 1.0
    assert not result.terminal


def test_left_and_right_pushes_are_mirror_images(env):
    """Action 0 from rest mirrors action 1"""
    left, _ = env.step(EnvState(0.0, 0.0, 0.0, 0.0), 0)
    right, _ = env.step(EnvState(0.0, 0.0, 0.0, 0.0), 1)
    np.testing.assert_allclose(left.observation, -right.observation)


def test_failure_terminates_without_truncation(env):
    """Leaving the track ends the episode as a failure"""
    state, result = env.step(EnvState(2.39, 1.0, 0.0, 0.0), 1)
    assert result.terminal
    assert not result.truncated
    assert env.is_failure(state)


def test_truncation_at_episode_limit(env):
    """The 500th step truncates a still-balanced episode"""
    state, result = env.step(EnvState(0.0, 0.0, 0.0, 0.0, step_count=MAX_EPISODE_STEPS - 1), 0)
    assert result.terminal
    assert result.truncated
    assert state.step_count == MAX_EPISODE_STEPS


def test_stepping_terminal_state_is_a_contract_violation(env):
    terminal, _ = env.step(EnvState(2.39, 1.0, 0.0, 0.0), 1)
    with pytest.raises(ContractViolation):
        env.step(terminal, 0)


def test_invalid_action_is_rejected(env):
    with pytest.raises(ContractViolation):
        env.step(env.reset(0), 2)


def test_snapshot_restore_replays_bit_identically(env):
    """A restored snapshot yields the same trajectory"""
    state = env.reset(3)
    for _ in range(5):
        state, _ = env.step(state, 1)
    snap = env.snapshot(state)

    actions = [0, 1, 1, 0, 0, 1]
    first, second = state, env.restore(snap)
    for a in actions:
        first, _ = env.step(first, a)
        second, _ = env.step(second, a)
    assert first == second


def test_episode_seed_is_stable_and_distinct():
    assert episode_seed(1, 0) == episode_seed(1, 0)
    seeds = {episode_seed(1, i) for i in range(100)}
    assert len(seeds) == 100
    assert episode_seed(1, 0) != episode_seed(2, 0)


def test_task_replays_episode_sequence():
    """Two tasks with the same seed reset to the same sequence of states"""
    a, b = CartPoleTask(11), CartPoleTask(11)
    for _ in range(3):
        np.testing.assert_array_equal(a.reset(), b.reset())


def test_task_step_requires_reset():
    with pytest.raises(ContractViolation):
        CartPoleTask(0).step(0)


def test_task_reset_logs_its_seed(caplog):
    caplog.set_level(logging.DEBUG, logger="environments.cartpole_env")
    CartPoleTask(0).reset(seed=42)
    assert "reset from seed 42" in caplog.text


def test_random_actions_fall_quickly(env):
    """Uniformly random actions average well under 100 steps"""
    rng = np.random.default_rng(0)
    returns = []
    for i in range(50):
        state, total = env.reset(episode_seed(0, i)), 0.0
        while not state.terminal:
            state, result = env.step(state, int(rng.integers(2)))
            total += result.reward
        returns.append(total)
    assert np.mean(returns) < 100
