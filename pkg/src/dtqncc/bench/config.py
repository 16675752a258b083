"""Scenario configuration: YAML in, validated dataclasses out.

Every mapping is checked against its dataclass; unknown keys and bad values
raise :class:`ConfigError` naming the offending field path.

Schema (units in the key names; all sections optional except ``links``)::

    seed: 1
    duration_s: 30
    cc: dtqn              # reno | cubic | lia | dtqn | ddqn
    links:                # one entry per bottleneck link
      - rate_bps: 20000000
        prop_delay_us: 10000
        loss_prob: 0.0
        buffer_bdp: 1.0   # buffer as a multiple of the link BDP (overrides buffer_pkts)
        buffer_pkts: 1000
        trace: [[t_us, rate_bps, prop_delay_us], ...]
        square_wave: {period_us: 2000000, rates_bps: [8000000, 10000000]}
    subflow_links: [0, 1] # link index per subflow; repeat an index for a shared bottleneck
    workload: {kind: bulk | flows | competing, flow_sizes: [...], repetitions: 3,
               competing_cc: reno, competing_link: 0}
    telemetry: {window_us, mode, invoke_every, single_step_k, timeout_windows, compute_us}
    engine: {mode: inproc | socket, address: "host:port", edge_latency_us: 0}
    learn: false
    checkpoint: path/to/agent.ckpt
    train: {...TrainConfig fields...}
    reward: {...RewardParams fields...}
    actions: {n: 2, k: 2}
    datapath: {...DatapathConfig fields...}
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..agent.dqn import TrainConfig
from ..datapath import DatapathConfig
from ..netsim import MTU, US_PER_S, LinkSpec
from ..reward import RewardParams

CC_CHOICES = ("reno", "cubic", "lia", "dtqn", "ddqn")
AGENT_CC = ("dtqn", "ddqn")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class SquareWave:
    period_us: int
    rates_bps: list[int]

    def __post_init__(self):
        if self.period_us <= 0:
            raise ValueError("period_us must be > 0")
        if len(self.rates_bps) < 2 or min(self.rates_bps) <= 0:
            raise ValueError("rates_bps needs at least two positive rates")


@dataclass
class LinkConfig:
    rate_bps: int
    prop_delay_us: int
    loss_prob: float = 0.0
    buffer_pkts: int = 1000
    buffer_bdp: float | None = None
    trace: list = field(default_factory=list)
    square_wave: SquareWave | None = None

    def __post_init__(self):
        if self.rate_bps <= 0:
            raise ValueError("rate_bps must be > 0")
        if self.prop_delay_us < 0:
            raise ValueError("prop_delay_us must be >= 0")
        if not 0.0 <= self.loss_prob < 1.0:
            raise ValueError("loss_prob must lie in [0, 1)")
        if self.buffer_pkts < 1:
            raise ValueError("buffer_pkts must be >= 1")
        if self.buffer_bdp is not None and self.buffer_bdp <= 0:
            raise ValueError("buffer_bdp must be > 0")

    def bdp_pkts(self) -> float:
        """Round-trip BDP at the link's base rate, in MTU packets."""
        return self.rate_bps * 2 * self.prop_delay_us / (8 * MTU * US_PER_S)

    def to_spec(self, duration_us: int) -> LinkSpec:
        buffer = self.buffer_pkts
        if self.buffer_bdp is not None:
            buffer = max(1, int(round(self.buffer_bdp * self.bdp_pkts())))
        trace = [tuple(e) for e in self.trace]
        if self.square_wave is not None:
            trace = square_wave_trace(self.square_wave, duration_us, self.prop_delay_us)
        return LinkSpec(self.rate_bps, self.prop_delay_us, self.loss_prob, buffer, trace)


def square_wave_trace(wave: SquareWave, duration_us: int, delay_us: int) -> list[tuple[int, int, int]]:
    out = []
    t, i = 0, 0
    while t <= max(duration_us, 0):
        out.append((t, int(wave.rates_bps[i % len(wave.rates_bps)]), delay_us))
        t += wave.period_us
        i += 1
    return out


@dataclass
class WorkloadConfig:
    kind: str = "bulk"
    flow_sizes: list[int] = field(default_factory=list)
    repetitions: int = 1
    competing_cc: str = "reno"
    competing_link: int = 0

    def __post_init__(self):
        if self.kind not in ("bulk", "flows", "competing"):
            raise ValueError(f"kind must be bulk, flows or competing, got {self.kind!r}")
        if any(s <= 0 for s in self.flow_sizes):
            raise ValueError("flow sizes must be > 0")
        if self.repetitions < 0:
            raise ValueError("repetitions must be >= 0")
        if self.competing_cc not in ("reno", "cubic", "lia"):
            raise ValueError("competing_cc must be a baseline")


@dataclass
class TelemetrySection:
    window_us: int = 10_000
    mode: str | None = None
    invoke_every: int | None = None
    single_step_k: int = 5
    timeout_windows: int = 10
    compute_us: int = 0


@dataclass
class EngineConfig:
    mode: str = "inproc"
    address: str | None = None
    edge_latency_us: int = 0

    def __post_init__(self):
        if self.mode not in ("inproc", "socket"):
            raise ValueError(f"mode must be inproc or socket, got {self.mode!r}")
        if self.mode == "socket" and not self.address:
            raise ValueError("socket mode needs an address")
        if self.address is not None:
            port = self.address.rpartition(":")[2]
            if not port.isdigit() or not 0 < int(port) < 65536:
                raise ValueError(f"address must be HOST:PORT, got {self.address!r}")
        if self.edge_latency_us < 0:
            raise ValueError("edge_latency_us must be >= 0")

    @classmethod
    def parse(cls, spec: str, edge_latency_us: int = 0) -> "EngineConfig":
        """From a CLI value: ``inproc`` or ``socket:HOST:PORT``."""
        if spec == "inproc":
            return cls("inproc", None, edge_latency_us)
        if spec.startswith("socket:"):
            return cls("socket", spec[len("socket:"):], edge_latency_us)
        raise ValueError(f"engine must be 'inproc' or 'socket:ADDR', got {spec!r}")


@dataclass
class ActionConfig:
    n: int = 2
    k: int = 2


@dataclass
class ScenarioConfig:
    links: list[LinkConfig]
    seed: int = 1
    duration_s: float = 30.0
    cc: str = "reno"
    subflow_links: list[int] | None = None
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    telemetry: TelemetrySection = field(default_factory=TelemetrySection)
    engine: EngineConfig = field(default_factory=EngineConfig)
    learn: bool = False
    checkpoint: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    actions: ActionConfig = field(default_factory=ActionConfig)
    datapath: DatapathConfig = field(default_factory=DatapathConfig)

    def __post_init__(self):
        if not self.links:
            raise ValueError("at least one link is required")
        if self.duration_s < 0:
            raise ValueError("duration_s must be >= 0")
        if self.cc not in CC_CHOICES:
            raise ValueError(f"cc must be one of {CC_CHOICES}, got {self.cc!r}")
        if self.subflow_links is not None:
            if not self.subflow_links:
                raise ValueError("subflow_links must not be empty")
            bad = [i for i in self.subflow_links if not 0 <= i < len(self.links)]
            if bad:
                raise ValueError(f"subflow_links refers to missing links {bad}")

    @property
    def duration_us(self) -> int:
        return int(round(self.duration_s * US_PER_S))

    @property
    def subflow_map(self) -> list[int]:
        return list(self.subflow_links) if self.subflow_links is not None else list(range(len(self.links)))

    @property
    def n_subflows(self) -> int:
        return len(self.subflow_map)

    @property
    def is_agent(self) -> bool:
        return self.cc in AGENT_CC

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def content_hash(self) -> str:
        """Git-style blob SHA-1 of the canonical JSON form."""
        body = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(copy.deepcopy(self), **changes)


_NESTED = {
    "links": LinkConfig,
    "workload": WorkloadConfig,
    "telemetry": TelemetrySection,
    "engine": EngineConfig,
    "train": TrainConfig,
    "reward": RewardParams,
    "actions": ActionConfig,
    "datapath": DatapathConfig,
    "square_wave": SquareWave,
}


def _build(cls, data: Any, path: str):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        nested = _NESTED.get(key)
        if nested is LinkConfig:
            if not isinstance(value, list):
                raise ConfigError(sub, "expected a list of links")
            value = [_build(LinkConfig, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        elif nested is not None and value is not None:
            value = _build(nested, value, sub)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(path or "<root>", str(exc)) from None
    except ValueError as exc:
        raise ConfigError(path or "<root>", str(exc)) from None


def from_dict(data: dict) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "")


def load(path) -> ScenarioConfig:
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text)
    if data is None:
        raise ConfigError("<root>", "empty config file")
    return from_dict(data)


def dump(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
