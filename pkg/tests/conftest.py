import numpy as np
import pytest

from agents.neural_core import MLParams
from agents.target_policies import PolicyKind, TargetPolicy, TrainConfig
from environments.adversarial_env import BenchmarkMode, BudgetConfig
from environments.cartpole_env import CartPoleEnv
from services.benchmark_service import (
    AdversaryTrainingResult,
    BenchmarkReport,
    ConvergenceCriteria,
    TargetDescriptor,
    TrainingSummary,
)
from services.qstar_service import QFunction, QSource


def linear_net(weights, bias) -> MLParams:
    """Single affine layer; handy for policies with known outputs"""
    w = np.asarray(weights, dtype=np.float64)
    return MLParams([w], [np.asarray(bias, dtype=np.float64)], ["identity"])


def dqn_policy(weights, bias, train_seed: int = 0) -> TargetPolicy:
    return TargetPolicy(
        kind=PolicyKind.DQN,
        value_params=linear_net(weights, bias),
        train_config=TrainConfig.for_kind("dqn"),
        train_seed=train_seed,
        env_seed=0,
    )


def value_policy(kind: str, value: float, logits=(0.0, 0.0), obs_dim: int = 4, value_weights=None) -> TargetPolicy:
    """A2C/PPO policy with constant logits and V(s) = value_weights . s + value"""
    weights = np.zeros((1, obs_dim)) if value_weights is None else [value_weights]
    return TargetPolicy(
        kind=PolicyKind(kind),
        value_params=linear_net(weights, [value]),
        policy_params=linear_net(np.zeros((2, obs_dim)), logits),
        train_config=TrainConfig.for_kind(kind),
        train_seed=0,
        env_seed=0,
    )


def make_adversary(policy: TargetPolicy, mode: BenchmarkMode, budget: BudgetConfig = None,
                   trained_against: str = "dqn_seed0", converged: bool = True) -> AdversaryTrainingResult:
    budget = budget or BudgetConfig()
    summary = TrainingSummary(converged=converged, training_steps=1000, training_episodes=50,
                              optimal_adversarial_return=480.0, max_training_regret=492.0,
                              avg_regret=490.0, avg_perturbations=7.0)
    policy.metadata.update({
        "role": "adversary",
        "mode": mode.value,
        "budget": budget.model_dump(mode="json"),
        "trained_against": trained_against,
        "criteria": ConvergenceCriteria().model_dump(mode="json"),
        "training_summary": summary.model_dump(mode="json"),
    })
    return AdversaryTrainingResult(policy, mode, budget, summary)


def make_report(policy_id: str = "dqn_seed0", test_mean_perturbations: float = 7.0, **overrides) -> BenchmarkReport:
    fields = dict(
        mode=BenchmarkMode.RESILIENCE,
        target=TargetDescriptor(policy_id=policy_id, kind=policy_id.split("_")[0], train_seed=0,
                                env_seed=0, final_eval_return=500.0),
        adversary_trained_against=policy_id,
        budget=BudgetConfig(),
        cost={"type": "uniform", "cost": 1.0},
        q_source="direct",
        converged=True,
        training_steps=50000,
        training_episodes=4000,
        optimal_adversarial_return=484.5,
        max_adversarial_regret=492.0,
        training_avg_regret=491.44,
        training_avg_perturbations=7.13,
        episodes=3,
        test_mean_regret=491.15,
        test_mean_perturbations=test_mean_perturbations,
        test_mean_cost=test_mean_perturbations,
        test_max_regret=492.0,
        histogram=[3, 2, 1],
        first_quartile_fraction=0.5,
        mean_episode_length=9.0,
        seeds={"eval_seed": 0},
        criteria=ConvergenceCriteria(),
    )
    fields.update(overrides)
    return BenchmarkReport(**fields)


@pytest.fixture
def env():
    return CartPoleEnv()


@pytest.fixture
def balancing_target():
    """Pushes toward the side the pole is falling: Q = [-(theta + theta_dot), theta + theta_dot]"""
    return dqn_policy([[0.0, 0.0, -1.0, -1.0], [0.0, 0.0, 1.0, 1.0]], [0.0, 0.0])


@pytest.fixture
def fixed_qfn():
    """Q = [0, 1] everywhere, so the induced action is always 0"""
    return QFunction(source=QSource.DIRECT, evaluator=lambda state: np.array([0.0, 1.0]))


@pytest.fixture
def no_action_adversary():
    """Adversary network over the 6-vector encoding that always prefers index 0"""
    return dqn_policy(np.zeros((2, 6)), [1.0, 0.0], train_seed=99)
