"""Hierarchical per-subflow reward.

Boundary conditions (cwnd at its bounds, actions that ignore the exploration
flag) short-circuit to +1 / -1. Otherwise the reward blends an RTT penalty
and a throughput reward with a sigmoid weight driven by how far the smoothed
RTT ratio sits above a dynamic threshold.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence


@dataclass
class RewardParams:
    beta: float | None = None
    beta_ratio: float = 1.5
    g: float = 0.05
    d_floor_us: float | None = None
    sigma_us: float = 1000.0
    kappa: float = 4.0
    w_d: float = 0.5
    w_rho: float = 1.0
    expflag_period: int = 6
    quantize: bool = True
    clamp_penalty: bool = False
    clip_normal: bool = True

    def __post_init__(self):
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.beta_ratio <= 0:
            raise ValueError("beta_ratio must be > 0")
        for name in ("sigma_us", "kappa", "w_d", "w_rho"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.expflag_period < 1:
            raise ValueError("expflag_period must be >= 1")

    def resolve(self, measured_floor_us: float | None) -> tuple[float, float]:
        """``(beta, d_floor)`` in microseconds, binding unset values to the measured floor."""
        d_f = self.d_floor_us if self.d_floor_us is not None else measured_floor_us
        if d_f is None or d_f <= 0:
            raise ValueError("an RTT floor is required when d_floor_us is unset")
        beta = self.beta if self.beta is not None else self.beta_ratio * d_f
        return beta, d_f


def threshold(d_min_us: float, params: RewardParams, d_floor_us: float | None = None) -> float:
    """Permissible RTT ratio ``beta * (1 + g * levels) / d_min``.

    ``levels`` counts whole ``sigma_us`` steps of ``d_min`` above the floor
    (floored), so sub-sigma jitter maps to the same level.
    """
    if d_min_us <= 0:
        raise ValueError(f"d_min_us must be > 0, got {d_min_us}")
    beta, d_f = params.resolve(d_floor_us if d_floor_us is not None else d_min_us)
    levels = (d_min_us - d_f) / params.sigma_us
    if params.quantize:
        levels = math.floor(levels)
    return beta * (1.0 + params.g * levels) / d_min_us


def _excess(d_bar_us, d_min_us, params, d_floor_us):
    return d_bar_us / d_min_us - threshold(d_min_us, params, d_floor_us)


def alpha(d_bar_us: float, d_min_us: float, params: RewardParams, d_floor_us: float | None = None) -> float:
    z = -params.kappa * _excess(d_bar_us, d_min_us, params, d_floor_us)
    if z > 700.0:
        return 1.0 / (1.0 + math.exp(700.0))
    return 1.0 / (1.0 + math.exp(z))


def rtt_penalty(d_bar_us: float, d_min_us: float, params: RewardParams, d_floor_us: float | None = None) -> float:
    p = -params.w_d * _excess(d_bar_us, d_min_us, params, d_floor_us)
    return min(p, 0.0) if params.clamp_penalty else p


def tput_reward(rho_bar: float, params: RewardParams) -> float:
    if rho_bar < 0:
        raise ValueError(f"rho_bar must be >= 0, got {rho_bar}")
    return params.w_rho * rho_bar


class Kind(enum.Enum):
    BOUNDARY = "boundary"
    NORMAL = "normal"


@dataclass(frozen=True)
class SubflowReward:
    kind: Kind
    value: float
    threshold: float = float("nan")
    alpha: float = float("nan")
    p_d: float = float("nan")
    r_rho: float = float("nan")


@dataclass(frozen=True)
class RewardBreakdown:
    subflows: tuple[SubflowReward, ...]
    total: float


def subflow_reward(
    d_bar_us: float,
    d_min_us: float,
    rho_bar: float,
    delta: int,
    cwnd_target: int,
    cwnd_min: int,
    cwnd_max: int,
    expflag: int,
    params: RewardParams,
    d_floor_us: float | None = None,
) -> SubflowReward:
    """Reward for one subflow after action component ``delta`` moved its target to ``cwnd_target``."""
    if cwnd_target <= cwnd_min or cwnd_target >= cwnd_max:
        return SubflowReward(Kind.BOUNDARY, -1.0)
    if expflag:
        return SubflowReward(Kind.BOUNDARY, 1.0 if delta > 0 else -1.0)
    t = threshold(d_min_us, params, d_floor_us)
    a = alpha(d_bar_us, d_min_us, params, d_floor_us)
    p_d = rtt_penalty(d_bar_us, d_min_us, params, d_floor_us)
    r_rho = tput_reward(rho_bar, params)
    r = a * p_d + (1.0 - a) * r_rho
    if params.clip_normal:
        r = min(max(r, -1.0), 1.0)
    return SubflowReward(Kind.NORMAL, r, t, a, p_d, r_rho)


def connection_reward(entries: Sequence[SubflowReward | float]) -> float:
    return float(sum(e.value if isinstance(e, SubflowReward) else e for e in entries))


def breakdown(entries: Sequence[SubflowReward]) -> RewardBreakdown:
    return RewardBreakdown(tuple(entries), connection_reward(entries))


def update_expflag(increased: Sequence[bool], period: int) -> int:
    """1 iff none of the last ``period`` decision steps increased cwnd.

    ``increased`` is the per-step history, oldest first; fewer than
    ``period`` recorded steps never raise the flag.
    """
    if len(increased) < period:
        return 0
    return 0 if any(increased[-period:]) else 1


@dataclass
class ExpFlag:
    """Streaming form of :func:`update_expflag` for one subflow."""

    period: int = 6
    history: deque = field(default_factory=deque)

    def step(self, increased: bool) -> int:
        self.history.append(bool(increased))
        while len(self.history) > self.period:
            self.history.popleft()
        return self.flag

    @property
    def flag(self) -> int:
        return update_expflag(list(self.history), self.period)

    @property
    def steps_since_increase(self) -> int:
        n = 0
        for inc in reversed(self.history):
            if inc:
                break
            n += 1
        return n
