"""Double-Q learning over trajectory windows.

Shared by the Transformer agent (context length L) and the single-step
feed-forward ablation (L = 1): both sample windows from the same replay,
regress every real timestep onto Double-Q targets, and keep a hard-synced
target copy of the online parameters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .network import MLPQNet, QNet, TransformerQNet, matched_hidden, transformer_param_count
from .replay import Batch, ReplayBuffer


@dataclass
class TrainConfig:
    gamma: float = 0.95
    lr: float = 3e-4
    batch_size: int = 32
    context_len: int = 8
    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    d_ff: int = 128
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 5000
    target_sync: int = 200
    replay_capacity: int = 50_000
    grad_clip: float = 1.0
    arch: str = "transformer"
    mlp_hidden: int | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    train_every: int = 1
    learning_starts: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.context_len < 1:
            raise ValueError("context_len must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.arch not in ("transformer", "mlp"):
            raise ValueError(f"arch must be 'transformer' or 'mlp', got {self.arch!r}")
        if not (0.0 <= self.eps_end <= 1.0 and 0.0 <= self.eps_start <= 1.0):
            raise ValueError("epsilon bounds must lie in [0, 1]")
        if self.target_sync < 1 or self.train_every < 1:
            raise ValueError("target_sync and train_every must be >= 1")

    @classmethod
    def single_step(cls, **overrides) -> "TrainConfig":
        """The feed-forward ablation: context length 1, matched parameter budget."""
        return cls(**{"context_len": 1, "arch": "mlp", **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


def build_network(cfg: TrainConfig, in_dim: int, n_actions: int, seed) -> QNet:
    if cfg.arch == "transformer":
        return TransformerQNet(in_dim, n_actions, cfg.context_len, cfg.d_model, cfg.n_blocks,
                               cfg.n_heads, cfg.d_ff, seed)
    hidden = cfg.mlp_hidden
    if hidden is None:
        budget = transformer_param_count(in_dim, n_actions, 8, cfg.d_model, cfg.n_blocks, cfg.d_ff)
        hidden = matched_hidden(budget, in_dim, n_actions)
    return MLPQNet(in_dim, n_actions, cfg.context_len, hidden, seed)


def greedy(q_row: np.ndarray) -> int:
    """Argmax with ties to the lowest index."""
    return int(np.argmax(q_row))


def select_action(net: QNet, context, eps: float, rng: np.random.Generator, valid=None) -> int:
    """epsilon-greedy over the Q row of the newest context step."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {eps}")
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(net.n_actions))
    q = net.q_values(np.asarray(context)[None], None if valid is None else np.asarray(valid)[None])
    return greedy(q[0, -1])


def double_q_targets(rewards, dones, q_next_online, q_next_target, gamma: float) -> np.ndarray:
    """``r + gamma * (1 - d) * Q_target(next, argmax_a Q_online(next, a))``."""
    q_next_online = np.asarray(q_next_online, dtype=np.float64)
    q_next_target = np.asarray(q_next_target, dtype=np.float64)
    a_star = np.argmax(q_next_online, axis=-1)
    q_eval = np.take_along_axis(q_next_target, a_star[..., None], axis=-1)[..., 0]
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    return np.asarray(rewards, dtype=np.float64) + gamma * not_done * q_eval


def compute_targets(online: QNet, target: QNet, batch: Batch, gamma: float) -> np.ndarray:
    """Targets of shape (B, L); padded steps get 0. Plain arrays, so no gradient path."""
    q_on = online.q_values(batch.next_obs, batch.next_valid)
    q_tg = target.q_values(batch.next_obs, batch.next_valid)
    y = double_q_targets(batch.rewards, batch.dones, q_on, q_tg, gamma)
    return np.where(batch.valid, y, 0.0)


def td_loss(q: np.ndarray, actions, targets, mask=None) -> tuple[float, np.ndarray]:
    """Mean squared Bellman error over real steps and its gradient w.r.t. ``q``.

    q: (B, L, A); actions, targets, mask: (B, L).
    """
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    if q.shape[:2] != actions.shape or actions.shape != targets.shape:
        raise ValueError(f"shape mismatch: q {q.shape}, actions {actions.shape}, targets {targets.shape}")
    mask = np.ones(actions.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    dq = np.zeros_like(q)
    if count == 0:
        return 0.0, dq
    q_a = np.take_along_axis(q, actions[..., None], axis=-1)[..., 0]
    resid = np.where(mask, q_a - targets, 0.0)
    loss = float((resid * resid).sum() / count)
    np.put_along_axis(dq, actions[..., None], (2.0 * resid / count)[..., None], axis=-1)
    return loss, dq


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale so the global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class StepResult(NamedTuple):
    trained: bool
    loss: float = float("nan")
    grad_norm: float = float("nan")
    synced: bool = False


class DQNAgent:
    """Online / target networks, replay, optimiser and the exploration schedule."""

    def __init__(self, cfg: TrainConfig, obs_dim: int, n_actions: int, seed: int = 0):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        ss = np.random.SeedSequence(seed)
        init_seed, self._sample_seed, self._act_seed = ss.spawn(3)
        self.online = build_network(cfg, obs_dim, n_actions, np.random.default_rng(init_seed))
        self.target = self.online.clone()
        self.opt = Adam(self.online.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.replay = ReplayBuffer(cfg.replay_capacity, obs_dim)
        self.sample_rng = np.random.default_rng(self._sample_seed)
        self.act_rng = np.random.default_rng(self._act_seed)
        self.updates = 0
        self.act_steps = 0
        self.rejected_steps = 0
        self.insufficient_replay = 0
        self.last_loss = float("nan")

    @property
    def context_len(self) -> int:
        return self.cfg.context_len

    @property
    def min_replay(self) -> int:
        c = self.cfg
        return c.learning_starts if c.learning_starts is not None else c.batch_size * c.context_len

    def epsilon(self, step: int | None = None) -> float:
        c = self.cfg
        s = self.act_steps if step is None else step
        if c.eps_decay_steps <= 0 or s >= c.eps_decay_steps:
            return c.eps_end
        return c.eps_start + (c.eps_end - c.eps_start) * s / c.eps_decay_steps

    def act(self, context, valid=None, explore: bool = True) -> int:
        eps = self.epsilon() if explore else 0.0
        a = select_action(self.online, context, eps, self.act_rng, valid)
        if explore:
            self.act_steps += 1
        return a

    def loss_and_grads(self, batch: Batch, targets: np.ndarray):
        q, cache = self.online.forward(batch.obs, batch.valid)
        loss, dq = td_loss(q, batch.actions, targets, batch.valid)
        return loss, self.online.backward(dq, cache)

    def train_step(self, batch: Batch | None = None) -> StepResult:
        """One gradient update; a no-op while replay holds fewer than B*L steps."""
        c = self.cfg
        if batch is None:
            if len(self.replay) < max(self.min_replay, 1):
                self.insufficient_replay += 1
                return StepResult(False)
            batch = self.replay.sample(c.batch_size, c.context_len, self.sample_rng)
        targets = compute_targets(self.online, self.target, batch, c.gamma)
        loss, grads = self.loss_and_grads(batch, targets)
        grads, norm = clip_grads(grads, c.grad_clip)
        if not (np.isfinite(norm) and np.isfinite(loss)):
            self.rejected_steps += 1
            return StepResult(False, loss, norm)
        self.opt.step(self.online.params, grads)
        self.updates += 1
        self.last_loss = loss
        synced = self.updates % c.target_sync == 0
        if synced:
            self.sync_target()
        return StepResult(True, loss, norm, synced)

    def sync_target(self) -> None:
        self.target.load_params(self.online.params)
