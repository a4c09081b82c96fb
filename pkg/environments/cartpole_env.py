"""
Cart-Pole Environment
Deterministic, seedable cart-pole physics with value-semantics states
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from services.errors import ContractViolation

logger = logging.getLogger(__name__)

MAX_EPISODE_STEPS = 500
N_ACTIONS = 2
OBS_DIM = 4


@dataclass(frozen=True)
class EnvState:
    """Physical cart-pole state plus the episode step counter"""
    cart_position: float
    cart_velocity: float
    pole_angle: float
    pole_tip_velocity: float
    step_count: int = 0
    terminal: bool = False
    truncated: bool = False

    @property
    def observation(self) -> np.ndarray:
        return np.array(
            [self.cart_position, self.cart_velocity, self.pole_angle, self.pole_tip_velocity],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool
    truncated: bool = False


def episode_seed(seed: int, index: int) -> int:
    """Derive the reset seed of episode `index` from a base seed"""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


class CartPoleEnv:
    """
    Classic cart-pole dynamics integrated with semi-implicit Euler.

    The environment holds only constants; every operation takes and returns
    EnvState values, so one instance can be shared freely.
    """

    def __init__(self, max_episode_steps: int = MAX_EPISODE_STEPS):
        self.gravity = 9.8
        self.cart_mass = 1.0
        self.pole_mass = 0.1
        self.total_mass = self.cart_mass + self.pole_mass
        self.length = 0.5  # half the pole's length
        self.polemass_length = self.pole_mass * self.length
        self.force_mag = 10.0
        self.tau = 0.02
        self.x_threshold = 2.4
        self.theta_threshold_radians = 12 * 2 * math.pi / 360
        self.max_episode_steps = max_episode_steps
        self.n_actions = N_ACTIONS
        self.obs_dim = OBS_DIM

    def physics_constants(self) -> dict:
        """Constants recorded in every report for reproducibility"""
        return {
            "gravity": self.gravity,
            "cart_mass": self.cart_mass,
            "pole_mass": self.pole_mass,
            "half_pole_length": self.length,
            "force_mag": self.force_mag,
            "tau": self.tau,
            "integrator": "semi-implicit euler",
            "x_threshold": self.x_threshold,
            "theta_threshold_radians": self.theta_threshold_radians,
            "max_episode_steps": self.max_episode_steps,
        }

    def reset(self, seed: int) -> EnvState:
        rng = np.random.default_rng(seed)
        x, x_dot, theta, theta_dot = rng.uniform(low=-0.05, high=0.05, size=(4,))
        return EnvState(float(x), float(x_dot), float(theta), float(theta_dot), step_count=0)

    def is_failure(self, state: EnvState) -> bool:
        return bool(
            abs(state.cart_position) > self.x_threshold
            or abs(state.pole_angle) > self.theta_threshold_radians
        )

    def step(self, state: EnvState, action: int) -> Tuple[EnvState, StepResult]:
        if state.terminal:
            raise ContractViolation("Cannot step a terminal cart-pole state")
        if action not in (0, 1):
            raise ContractViolation(f"Action must be 0 or 1, got {action}")

        force = self.force_mag if action == 1 else -self.force_mag
        sin_theta = math.sin(state.pole_angle)
        cos_theta = math.cos(state.pole_angle)

        temp = (force + self.polemass_length * state.pole_tip_velocity ** 2 * sin_theta) / self.total_mass
        thetaacc = (self.gravity * sin_theta - cos_theta * temp) / (
            self.length * (4.0 / 3.0 - self.pole_mass * cos_theta ** 2 / self.total_mass)
        )
        xacc = temp - self.polemass_length * thetaacc * cos_theta / self.total_mass

        # semi-implicit: velocities first, positions use the new velocities
        x_dot = state.cart_velocity + self.tau * xacc
        x = state.cart_position + self.tau * x_dot
        theta_dot = state.pole_tip_velocity + self.tau * thetaacc
        theta = state.pole_angle + self.tau * theta_dot

        step_count = state.step_count + 1
        next_state = EnvState(x, x_dot, theta, theta_dot, step_count=step_count)
        failed = self.is_failure(next_state)
        truncated = not failed and step_count >= self.max_episode_steps
        next_state = replace(next_state, terminal=failed or truncated, truncated=truncated)

        result = StepResult(
            observation=next_state.observation,
            reward=1.0,
            terminal=next_state.terminal,
            truncated=truncated,
        )
        return next_state, result

    def snapshot(self, state: EnvState) -> EnvState:
        return replace(state)

    def restore(self, snapshot: EnvState) -> EnvState:
        return replace(snapshot)


class CartPoleTask:
    """
    Stateful gym-style adapter over CartPoleEnv used by the training loops.

    Episodes are reset from seeds derived from `env_seed` and a running
    episode counter, so a task replays identically for a given seed.
    """

    def __init__(self, env_seed: int, env: Optional[CartPoleEnv] = None):
        self.env = env or CartPoleEnv()
        self.env_seed = env_seed
        self.obs_dim = self.env.obs_dim
        self.n_actions = self.env.n_actions
        self.episode_index = 0
        self.state: Optional[EnvState] = None

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is None:
            seed = episode_seed(self.env_seed, self.episode_index)
            self.episode_index += 1
        self.state = self.env.reset(seed)
        logger.debug(f"CartPole episode reset from seed {seed}")
        return self.state.observation

    def step(self, action: int) -> Tuple[np.ndarray, float, bool, bool]:
        if self.state is None:
            raise ContractViolation("reset() must be called before step()")
        self.state, result = self.env.step(self.state, int(action))
        return result.observation, result.reward, result.terminal, result.truncated
