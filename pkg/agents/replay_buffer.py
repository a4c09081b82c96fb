"""
Replay Buffer
Fixed-capacity experience storage with proportional prioritized sampling
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    priority: float = 1.0


@dataclass
class ReplayBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    weights: np.ndarray
    indices: np.ndarray


class SumTree:
    """Binary segment tree over priorities for O(log n) prefix-sum lookup"""

    def __init__(self, capacity: int):
        size = 1
        while size < capacity:
            size *= 2
        self.size = size
        self.tree = np.zeros(2 * size, dtype=np.float64)

    def update(self, index: int, value: float):
        node = index + self.size
        self.tree[node] = value
        node //= 2
        while node >= 1:
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1]
            node //= 2

    def total(self) -> float:
        return float(self.tree[1])

    def find_prefixsum_index(self, mass: float) -> int:
        node = 1
        while node < self.size:
            left = 2 * node
            if mass < self.tree[left]:
                node = left
            else:
                mass -= self.tree[left]
                node = left + 1
        return node - self.size


class PrioritizedReplayBuffer:
    """
    Proportional prioritized replay.

    Sampling probability of slot i is p_i^alpha / sum_j p_j^alpha. With
    `prioritized=False` every slot keeps priority 1 and sampling is uniform.
    """

    def __init__(
        self,
        capacity: int,
        obs_dim: int,
        rng: np.random.Generator,
        alpha: float = 0.6,
        prioritized: bool = True,
        priority_eps: float = 1e-6,
    ):
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.rng = rng
        self.alpha = alpha if prioritized else 0.0
        self.prioritized = prioritized
        self.priority_eps = priority_eps

        self.states = np.zeros((capacity, obs_dim), dtype=np.float64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_states = np.zeros((capacity, obs_dim), dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=np.float64)
        self.priorities = np.zeros(capacity, dtype=np.float64)

        self.tree = SumTree(capacity)
        self.max_priority = 1.0
        self.next_index = 0
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def add(self, transition: Transition):
        i = self.next_index
        self.states[i] = transition.state
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.next_states[i] = transition.next_state
        self.dones[i] = float(transition.done)
        priority = self.max_priority if self.prioritized else 1.0
        self._set_priority(i, priority)

        self.next_index = (i + 1) % self.capacity
        if self.count + 1 == self.capacity:
            logger.debug(f"Replay buffer reached capacity {self.capacity}; oldest transitions are overwritten from now on")
        self.count = min(self.count + 1, self.capacity)

    def _set_priority(self, index: int, priority: float):
        self.priorities[index] = priority
        self.tree.update(index, priority ** self.alpha)

    def sampling_probabilities(self) -> np.ndarray:
        scaled = self.priorities[: self.count] ** self.alpha
        return scaled / scaled.sum()

    def sample_indices(self, batch_size: int) -> np.ndarray:
        total = self.tree.total()
        masses = self.rng.random(batch_size) * total
        indices = np.array([self.tree.find_prefixsum_index(m) for m in masses], dtype=np.int64)
        # float rounding can land one past the filled region
        return np.minimum(indices, self.count - 1)

    def sample(self, batch_size: int, beta: float = 0.4) -> ReplayBatch:
        if self.count == 0:
            raise ValueError("Cannot sample from an empty replay buffer")
        indices = self.sample_indices(batch_size)

        if self.prioritized:
            total = self.tree.total()
            probs = self.priorities[indices] ** self.alpha / total
            min_prob = float(np.min(self.priorities[: self.count] ** self.alpha)) / total
            max_weight = (min_prob * self.count) ** (-beta)
            weights = (probs * self.count) ** (-beta) / max_weight
        else:
            weights = np.ones(batch_size, dtype=np.float64)

        return ReplayBatch(
            states=self.states[indices],
            actions=self.actions[indices],
            rewards=self.rewards[indices],
            next_states=self.next_states[indices],
            dones=self.dones[indices],
            weights=weights,
            indices=indices,
        )

    def update_priorities(self, indices: np.ndarray, td_errors: np.ndarray):
        if not self.prioritized:
            return
        for index, td in zip(indices, td_errors):
            priority = float(abs(td)) + self.priority_eps
            self._set_priority(int(index), priority)
            self.max_priority = max(self.max_priority, priority)

    def transition(self, index: int) -> Transition:
        return Transition(
            state=self.states[index].copy(),
            action=int(self.actions[index]),
            reward=float(self.rewards[index]),
            next_state=self.next_states[index].copy(),
            done=bool(self.dones[index]),
            priority=float(self.priorities[index]),
        )
