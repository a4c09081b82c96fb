"""
End-to-end checks of the benchmark pipeline. Runs marked slow train real
targets and adversaries and take minutes; run them with `pytest -m slow`.
"""

from functools import lru_cache
from itertools import islice

import numpy as np
import pytest

from agents.target_policies import TrainConfig, act, evaluate, save_policy, train_target
from backend.cli import EXIT_OK, main
from environments.adversarial_env import BenchmarkMode, BudgetConfig, UniformCost
from environments.cartpole_env import CartPoleEnv
from services.benchmark_service import (
    ConvergenceCriteria,
    run_episodes,
    run_resilience,
    run_robustness,
    train_adversary,
)
from services.qstar_service import extract_q, imitate_q, q_direct, q_lookahead
from tests.conftest import dqn_policy, make_adversary


def test_reports_regenerate_bit_identically(tmp_path, balancing_target):
    """Same artifacts and seeds, same bytes"""
    target_path = save_policy(balancing_target, tmp_path / "dqn_seed0.json")
    always_perturb = make_adversary(dqn_policy(np.zeros((2, 6)), [0.0, 1.0], train_seed=5), BenchmarkMode.RESILIENCE)
    adversary_path = save_policy(always_perturb.adversary, tmp_path / "adversary_in.json")

    outputs = []
    for _ in range(2):
        code = main(["benchmark", "resilience", str(target_path), "--adversary", str(adversary_path),
                     "--episodes", "5", "--eval-seed", "11", "--workers", "2", "--output-dir", str(tmp_path / "shared")])
        assert code == EXIT_OK
        outputs.append({name: (tmp_path / "shared" / name).read_bytes()
                        for name in ("report.json", "episodes.jsonl", "traces.jsonl", "histogram.csv")})
    assert outputs[0] == outputs[1]


@pytest.mark.parametrize("mode", [BenchmarkMode.RESILIENCE, BenchmarkMode.ROBUSTNESS])
def test_episode_reward_identity_over_100_episodes(balancing_target, mode):
    """Adversary return = r_max - perturbed return - costs paid, episode by episode"""
    budget = BudgetConfig(delta_max=3) if mode == BenchmarkMode.ROBUSTNESS else BudgetConfig()
    always_perturb = dqn_policy(np.zeros((2, 6)), [0.0, 1.0], train_seed=5)
    records = run_episodes(balancing_target, always_perturb, extract_q(balancing_target), mode, budget,
                           UniformCost(), episodes=100, eval_seed=0)
    for r in records:
        n = r.perturbations
        if mode == BenchmarkMode.RESILIENCE:
            paid = float(n)
        else:
            paid = float(min(n, 3) + 3 * max(n - 3, 0))
        assert r.adversary_return == 500.0 - r.perturbed_return - paid
        assert r.regret == r.nominal_return - r.perturbed_return


# ==============================================
# SLOW: real training
# ==============================================

KINDS = ["dqn", "a2c", "ppo"]


@lru_cache(maxsize=None)
def trained_target(kind: str):
    return train_target(kind, TrainConfig.for_kind(kind), env_seed=0, train_seed=0)


@lru_cache(maxsize=None)
def resilience_run(kind: str):
    target = trained_target(kind)
    qfn = extract_q(target)
    adversary = train_adversary(target, qfn, BenchmarkMode.RESILIENCE, adversary_seed=0)
    return run_resilience(target, adversary, qfn, episodes=100)[0]


def _greedy_states(target, seeds, env):
    for seed in seeds:
        state = env.reset(seed)
        while not state.terminal:
            yield state
            state, _ = env.step(state, act(target, state.observation, greedy=True))


def _discounted_return(target, state, env, gamma):
    total, discount = 0.0, 1.0
    while not state.terminal:
        state, result = env.step(state, act(target, state.observation, greedy=True))
        total += discount * result.reward
        discount *= gamma
    return total


@pytest.mark.slow
@pytest.mark.parametrize("kind", KINDS)
def test_targets_reach_competence(kind):
    policy = trained_target(kind)
    assert policy.final_eval_return >= 475.0
    assert evaluate(policy, env_seed=0, episodes=100).mean_return >= 475.0


@pytest.mark.slow
@pytest.mark.parametrize("kind", KINDS)
def test_resilience_benchmark(kind):
    report = resilience_run(kind)
    assert report.test_mean_regret >= 470.0
    assert report.test_mean_perturbations <= 15.0
    assert report.first_quartile_fraction >= 0.5


@pytest.mark.slow
def test_some_target_reaches_near_maximal_regret():
    assert max(resilience_run(kind).max_adversarial_regret for kind in KINDS) >= 485.0


@pytest.mark.slow
@pytest.mark.parametrize("kind", KINDS)
def test_robustness_with_a_loose_budget_tracks_resilience(kind):
    target = trained_target(kind)
    qfn = extract_q(target)
    adversary = train_adversary(target, qfn, BenchmarkMode.ROBUSTNESS, BudgetConfig(delta_max=10),
                                adversary_seed=0)
    report, _ = run_robustness(target, adversary, qfn, delta_max=10, episodes=100)
    assert abs(report.test_mean_regret - resilience_run(kind).test_mean_regret) <= 20.0
    assert report.test_mean_perturbations <= 12.0


@pytest.mark.slow
def test_dqn_robustness_with_tight_budget():
    target = trained_target("dqn")
    qfn = extract_q(target)
    adversary = train_adversary(target, qfn, BenchmarkMode.ROBUSTNESS, BudgetConfig(delta_max=5),
                                adversary_seed=0)
    report, _ = run_robustness(target, adversary, qfn, delta_max=5, episodes=100)
    assert report.test_mean_perturbations <= 6.0
    assert report.epsilon_max == report.test_max_regret


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["a2c", "ppo"])
def test_value_lookahead_matches_monte_carlo_returns(kind):
    """Q(s, greedy) against the discounted return of the target's own rollout from s"""
    target = trained_target(kind)
    env = CartPoleEnv()
    qfn = q_lookahead(target, env)
    gamma = target.train_config.gamma
    states = [s for s in _greedy_states(target, [0], env) if s.step_count < 100][::5]
    assert len(states) == 20
    for state in states:
        greedy = act(target, state.observation, greedy=True)
        expected = _discounted_return(target, state, env, gamma)
        assert qfn.value(state, greedy) == pytest.approx(expected, rel=0.1)


@pytest.mark.slow
def test_imitated_q_picks_the_same_worst_action_as_direct_q():
    target = trained_target("dqn")
    env = CartPoleEnv()
    direct, imitated = q_direct(target), imitate_q(target, env)
    states = list(islice(_greedy_states(target, range(10), env), 1000))
    assert len(states) == 1000
    agreement = np.mean([direct.induced_action(s) == imitated.induced_action(s) for s in states])
    assert agreement >= 0.8


@pytest.mark.slow
def test_adversary_leaves_an_inert_target_alone(balancing_target):
    """Without a pushing force a perturbation only costs, so the trained adversary stops perturbing"""
    env = CartPoleEnv()
    env.force_mag = 0.0
    qfn = q_direct(balancing_target)
    criteria = ConvergenceCriteria(max_steps=40_000)
    adversary = train_adversary(balancing_target, qfn, BenchmarkMode.RESILIENCE, criteria=criteria,
                                adversary_seed=0, env=env)
    records = run_episodes(balancing_target, adversary.adversary, qfn, BenchmarkMode.RESILIENCE,
                           BudgetConfig(), UniformCost(), episodes=20, eval_seed=0, env=env)
    assert all(r.regret == 0.0 for r in records)
    assert np.mean([r.perturbations for r in records]) <= 0.1 * np.mean([r.episode_length for r in records])
