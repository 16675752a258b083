"""Decision engine: turns proxy observations into cwnd directives and learns online.

The engine keeps the context window of recent observations, scores the
previous action with the hierarchical reward once the next observation
arrives, stores the transition, runs training inline, and answers with new
per-subflow targets. It speaks the wire message types directly, so the same
object serves the in-process channel and the socket server.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import wire
from ..reward import Kind, RewardParams, SubflowReward, connection_reward, subflow_reward
from .actions import ActionSpace
from .dqn import DQNAgent
from .toy import ContextWindow

log = logging.getLogger(__name__)


@dataclass
class EngineStats:
    observations: int = 0
    directives: int = 0
    episodes: int = 0
    updates: int = 0
    rewards: list = field(default_factory=list)
    reward_kinds: dict = field(default_factory=dict)

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if self.rewards else float("nan")


def score_step(prev: wire.Observation, cur: wire.Observation, deltas, targets, params: RewardParams) -> list[SubflowReward]:
    """Per-subflow reward for the action taken at ``prev``, judged on ``cur``."""
    out = []
    for i, (p, c) in enumerate(zip(prev.raw, cur.raw)):
        d_min = c["min_rtt_us"] or p["min_rtt_us"]
        d_bar = c["mean_rtt_us"] or d_min
        d_floor = c["base_rtt_us"] or d_min
        rho = c["throughput_bps"] / c["bw_ceiling_bps"] if c.get("bw_ceiling_bps") else 0.0
        if d_min <= 0:
            # No RTT sample yet: nothing to judge.
            out.append(SubflowReward(Kind.NORMAL, 0.0))
            continue
        out.append(subflow_reward(
            d_bar_us=d_bar, d_min_us=d_min, rho_bar=rho, delta=deltas[i],
            cwnd_target=targets[i], cwnd_min=c["cwnd_min"], cwnd_max=c["cwnd_max"],
            expflag=p["expflag"], params=params, d_floor_us=d_floor,
        ))
    return out


class DecisionEngine:
    def __init__(self, agent: DQNAgent, actions: ActionSpace | None = None,
                 reward: RewardParams | None = None, learn: bool = True):
        self.agent = agent
        self.actions = actions or ActionSpace()
        self.reward = reward or RewardParams()
        self.learn = learn
        self.stats = EngineStats()
        self.n_subflows = self.actions.n_subflows
        self.window = ContextWindow(agent.context_len, agent.obs_dim)
        self._prev: wire.Observation | None = None
        self._prev_flat: np.ndarray | None = None
        self._prev_action: int | None = None
        self._prev_targets: list[int] | None = None
        self._held: tuple | None = None

    # -- wire entry point ----------------------------------------------------

    def handle(self, msg):
        if isinstance(msg, wire.Hello):
            if msg.n_subflows != self.n_subflows:
                raise ValueError(f"engine configured for {self.n_subflows} subflows, peer has {msg.n_subflows}")
            self.reset_episode()
            return wire.Hello(msg.conn_id, self.n_subflows, msg.features_per_subflow, msg.mode)
        if isinstance(msg, wire.Observation):
            return self.on_observation(msg)
        if isinstance(msg, wire.Bye):
            self.end_episode()
            return wire.Bye("ok")
        raise TypeError(f"engine cannot handle {type(msg).__name__}")

    # -- episode bookkeeping -------------------------------------------------

    def reset_episode(self) -> None:
        self.window.reset()
        self._prev = None
        self._prev_flat = None
        self._prev_action = None
        self._prev_targets = None
        self._held = None

    def end_episode(self) -> None:
        """Store the held transition as terminal and start afresh."""
        if self._held is not None and self.learn:
            obs, a, r, nxt = self._held
            self.agent.replay.add(obs, a, r, nxt, True)
        elif self.learn:
            self.agent.replay.end_episode()
        if self._prev is not None:
            self.stats.episodes += 1
        self.reset_episode()

    def _store(self, obs, action, reward, nxt) -> None:
        if self._held is not None:
            o, a, r, n = self._held
            self.agent.replay.add(o, a, r, n, False)
        self._held = (obs, action, reward, nxt)

    # -- decisions -----------------------------------------------------------

    def on_observation(self, msg: wire.Observation) -> wire.Directive:
        flat = np.asarray(msg.features, dtype=np.float64).reshape(-1)
        if flat.size != self.agent.obs_dim:
            raise ValueError(f"observation has {flat.size} features, engine expects {self.agent.obs_dim}")
        self.stats.observations += 1
        if self._prev is not None:
            parts = score_step(self._prev, msg, self.actions.deltas(self._prev_action), self._prev_targets, self.reward)
            r = connection_reward(parts)
            self.stats.rewards.append(r)
            for p in parts:
                self.stats.reward_kinds[p.kind.value] = self.stats.reward_kinds.get(p.kind.value, 0) + 1
            if self.learn:
                self._store(self._prev_flat, self._prev_action, r, flat)
                if self.agent.act_steps % self.agent.cfg.train_every == 0:
                    res = self.agent.train_step()
                    self.stats.updates += int(res.trained)
        self.window.push(flat)
        ctx, valid = self.window.arrays()
        action = self.agent.act(ctx, valid, explore=self.learn)
        current = [int(r["target"]) for r in msg.raw]
        targets = self.actions.apply(current, action, [r["cwnd_min"] for r in msg.raw], [r["cwnd_max"] for r in msg.raw])
        self._prev, self._prev_flat, self._prev_action, self._prev_targets = msg, flat, action, targets
        self.stats.directives += 1
        return wire.Directive(msg.step, targets, action)
