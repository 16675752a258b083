"""Episode-aware ring buffer that samples fixed-length trajectory windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    """B windows of L steps plus the same windows slid forward by one step.

    ``valid`` marks real (non-padded) steps; padding sits at the front of a
    window that starts before its episode did.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    valid: np.ndarray
    next_obs: np.ndarray
    next_valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.actions.shape


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.episode_start = np.zeros(capacity, dtype=np.int64)
        self.total = 0
        self._ep_start = 0
        self._in_episode = False

    def __len__(self) -> int:
        return min(self.total, self.capacity)

    def add(self, obs, action: int, reward: float, next_obs, done: bool) -> None:
        if not np.isfinite(reward):
            raise ValueError(f"reward must be finite, got {reward}")
        if not self._in_episode:
            self._ep_start = self.total
            self._in_episode = True
        i = self.total % self.capacity
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.dones[i] = done
        self.episode_start[i] = self._ep_start
        self.total += 1
        if done:
            self._in_episode = False

    def end_episode(self) -> None:
        """Close the current episode without a terminal step (truncation)."""
        self._in_episode = False

    def window(self, end: int, length: int):
        """Indices and validity for the ``length`` steps ending at absolute step ``end``."""
        i = end % self.capacity
        first = max(self.episode_start[i], self.total - self.capacity)
        steps = np.arange(end - length + 1, end + 1)
        valid = steps >= first
        return np.where(valid, steps, end) % self.capacity, valid

    def sample(self, batch: int, length: int, rng: np.random.Generator) -> Batch:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        lo = self.total - len(self)
        ends = rng.integers(lo, self.total, size=batch)
        idx = np.empty((batch, length), dtype=np.int64)
        valid = np.empty((batch, length), dtype=bool)
        for b, e in enumerate(ends):
            idx[b], valid[b] = self.window(int(e), length)
        obs = self.obs[idx]
        obs[~valid] = 0.0
        next_obs = np.empty_like(obs)
        next_obs[:, :-1] = obs[:, 1:]
        next_obs[:, -1] = self.next_obs[idx[:, -1]]
        next_valid = np.empty_like(valid)
        next_valid[:, :-1] = valid[:, 1:]
        next_valid[:, -1] = True
        return Batch(
            obs=obs,
            actions=np.where(valid, self.actions[idx], 0),
            rewards=np.where(valid, self.rewards[idx], 0.0),
            dones=np.where(valid, self.dones[idx], False),
            valid=valid,
            next_obs=next_obs,
            next_valid=next_valid,
        )
