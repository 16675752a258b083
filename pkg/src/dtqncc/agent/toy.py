"""A two-state, two-action task that needs one step of memory.

Steps alternate cue and recall. A cue step shows ``[1, s]`` for a hidden bit
``s`` drawn fresh each pair; the recall step shows ``[0, 0]``. Every step pays
1 when the action equals ``s``. A memoryless policy can be right on every cue
but only half of the recalls, so its ceiling is 75% optimal actions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .dqn import DQNAgent, TrainConfig


class CueRecall:
    obs_dim = 2
    n_actions = 2

    def __init__(self, pairs: int = 10, seed: int = 0):
        self.pairs = pairs
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.state = 0

    @property
    def length(self) -> int:
        return 2 * self.pairs

    def reset(self) -> np.ndarray:
        self.t = 0
        return self._observe()

    def _observe(self) -> np.ndarray:
        if self.t % 2 == 0:
            self.state = int(self.rng.integers(2))
            return np.array([1.0, float(self.state)])
        return np.zeros(2)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        reward = 1.0 if action == self.state else 0.0
        self.t += 1
        done = self.t >= self.length
        obs = np.zeros(2) if done else self._observe()
        return obs, reward, done


class ContextWindow:
    """The last L observations, zero-padded at the front with a validity mask."""

    def __init__(self, length: int, obs_dim: int):
        self.length = length
        self.obs_dim = obs_dim
        self.buf: deque = deque(maxlen=length)

    def reset(self) -> None:
        self.buf.clear()

    def push(self, obs) -> None:
        self.buf.append(np.asarray(obs, dtype=np.float64))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        ctx = np.zeros((self.length, self.obs_dim))
        valid = np.zeros(self.length, dtype=bool)
        n = len(self.buf)
        if n:
            ctx[self.length - n:] = np.stack(self.buf)
            valid[self.length - n:] = True
        return ctx, valid


@dataclass
class ToyResult:
    optimal_rate: float
    episodes: int
    updates: int


def run_episode(agent: DQNAgent, env: CueRecall, learn: bool) -> tuple[int, int]:
    win = ContextWindow(agent.context_len, env.obs_dim)
    obs = env.reset()
    win.push(obs)
    hits = 0
    done = False
    while not done:
        ctx, valid = win.arrays()
        a = agent.act(ctx, valid, explore=learn)
        nxt, r, done = env.step(a)
        hits += int(r > 0)
        if learn:
            agent.replay.add(obs, a, r, nxt, done)
            if agent.act_steps % agent.cfg.train_every == 0:
                agent.train_step()
        obs = nxt
        win.push(obs)
    return hits, env.length


def train_toy(cfg: TrainConfig, seed: int, episodes: int = 150, eval_episodes: int = 50, pairs: int = 10) -> ToyResult:
    agent = DQNAgent(cfg, CueRecall.obs_dim, CueRecall.n_actions, seed=seed)
    env = CueRecall(pairs, seed=seed)
    for _ in range(episodes):
        run_episode(agent, env, learn=True)
    eval_env = CueRecall(pairs, seed=seed + 10_000)
    hits = total = 0
    for _ in range(eval_episodes):
        h, n = run_episode(agent, eval_env, learn=False)
        hits += h
        total += n
    return ToyResult(hits / total, episodes, agent.updates)
