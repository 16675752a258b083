"""Experiment drivers built on :func:`run_scenario`: sweeps, FCT, fairness, training."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..agent.dqn import DQNAgent
from ..netsim import derive_seed
from .config import LinkConfig, ScenarioConfig, SquareWave, WorkloadConfig
from .metrics import fct_stats
from .scenario import RunMetrics, RunResult, csv_text, make_agent, run_scenario

log = logging.getLogger(__name__)

AXES = ("loss", "buffer", "edge_latency")
LOSS_VALUES = (0.0, 0.0015, 0.005, 0.01)
BUFFER_VALUES = (0.3, 0.6, 1.0, 2.0, 3.0)
SWEEP_HEADER = ("axis", "value", "point", "rep", "seed", "cc", "goodput_bps", "capacity_bps",
                "rtt_mean_us", "rtt_std_us", "rtt_cv", "retransmits", "drops_random_loss", "drops_buffer")
FCT_HEADER = ("size_bytes", "count", "mean_us", "median_us", "p95_us", "min_us", "max_us")


def point_seed(root_seed: int, point: int, rep: int) -> int:
    """Seed for sweep point ``point``, repetition ``rep``; independent across points."""
    return derive_seed(root_seed, point, rep) % (2**31)


def apply_axis(cfg: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """Copy of ``cfg`` with ``value`` set on every link (or the engine) for ``axis``."""
    if axis == "loss":
        links = [LinkConfig(**{**vars(l), "loss_prob": float(value)}) for l in cfg.links]
        return cfg.replace(links=links)
    if axis == "buffer":
        links = [LinkConfig(**{**vars(l), "buffer_bdp": float(value)}) for l in cfg.links]
        return cfg.replace(links=links)
    if axis == "edge_latency":
        engine = type(cfg.engine)(cfg.engine.mode, cfg.engine.address, int(value))
        return cfg.replace(engine=engine)
    raise ValueError(f"axis must be one of {AXES}, got {axis!r}")


def sweep_row(axis, value, point, rep, seed, cfg: ScenarioConfig, m: RunMetrics) -> tuple:
    return (axis, value, point, rep, seed, cfg.cc, m.goodput_bps, m.capacity_bps, m.rtt_mean_us,
            m.rtt_std_us, m.rtt_cv, m.retransmits, m.drops_random_loss, m.drops_buffer)


def sweep(cfg: ScenarioConfig, axis: str, values, reps: int = 1, agent: DQNAgent | None = None) -> list[tuple]:
    """Run every (value, rep) point; returns long-format rows matching :data:`SWEEP_HEADER`.

    Agent scenarios run frozen (no learning) so every point sees the same policy.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if cfg.is_agent and agent is None and cfg.engine.mode == "inproc":
        agent = make_agent(cfg)
    rows = []
    for i, v in enumerate(values):
        for j in range(reps):
            seed = point_seed(cfg.seed, i, j)
            run_cfg = apply_axis(cfg, axis, v).replace(seed=seed)
            res = run_scenario(run_cfg, agent=agent, learn=False)
            rows.append(sweep_row(axis, v, i, j, seed, run_cfg, res.metrics))
            log.info("sweep %s=%s rep %d: %.3f Mbps", axis, v, j, res.metrics.goodput_bps / 1e6)
    return rows


def sweep_csv(rows) -> str:
    return csv_text(SWEEP_HEADER, rows)


def fct_experiment(cfg: ScenarioConfig, flow_sizes, repetitions: int | None = None,
                   agent: DQNAgent | None = None) -> dict[int, dict]:
    """Sequential flows of each size; per-size FCT statistics keyed by size in bytes."""
    sizes = [int(s) for s in flow_sizes]
    if any(s <= 0 for s in sizes):
        raise ValueError("flow sizes must be > 0")
    reps = cfg.workload.repetitions if repetitions is None else repetitions
    wl = WorkloadConfig("flows", sizes, reps, cfg.workload.competing_cc, cfg.workload.competing_link)
    res = run_scenario(cfg.replace(workload=wl), agent=agent, learn=False)
    by_size: dict[int, list[int]] = {s: [] for s in sizes}
    for _, size, _, _, fct in res.metrics.flows:
        by_size[size].append(fct)
    return {s: {**fct_stats(v), "fcts_us": v} for s, v in by_size.items()}


def fct_csv(stats: dict[int, dict]) -> str:
    rows = [(s, d["count"], d["mean_us"], d["median_us"], d["p95_us"], d["min_us"], d["max_us"])
            for s, d in stats.items()]
    return csv_text(FCT_HEADER, rows)


def fairness(cfg: ScenarioConfig, agent: DQNAgent | None = None, competing_cc: str | None = None,
             link: int | None = None) -> RunResult:
    """Run ``cfg`` against a single-path competing flow; the JFI lands in the metrics."""
    wl = cfg.workload
    wl = WorkloadConfig("competing", list(wl.flow_sizes), wl.repetitions,
                        competing_cc or wl.competing_cc, wl.competing_link if link is None else link)
    return run_scenario(cfg.replace(workload=wl), agent=agent, learn=False)


# -- training --------------------------------------------------------------------

@dataclass
class TrainingRange:
    """Domain-randomisation ranges for training episodes."""

    rate_bps: tuple[float, float] = (8e6, 20e6)
    prop_delay_us: tuple[int, int] = (4_000, 25_000)
    buffer_bdp: tuple[float, float] = (0.6, 3.0)
    loss_probs: tuple[float, ...] = (0.0, 0.0, 0.005, 0.01)
    square_wave_prob: float = 0.5
    wave_depth: tuple[float, float] = (0.6, 0.9)
    wave_period_us: tuple[int, int] = (300_000, 2_000_000)


def randomized_config(base: ScenarioConfig, rng: np.random.Generator, ranges: TrainingRange,
                      duration_s: float, seed: int) -> ScenarioConfig:
    links = []
    for _ in base.links:
        rate = int(rng.uniform(*ranges.rate_bps))
        prop = int(rng.integers(ranges.prop_delay_us[0], ranges.prop_delay_us[1] + 1))
        wave = None
        if rng.random() < ranges.square_wave_prob:
            low = int(rate * rng.uniform(*ranges.wave_depth))
            period = int(rng.integers(ranges.wave_period_us[0], ranges.wave_period_us[1] + 1))
            wave = SquareWave(period, [low, rate])
        links.append(LinkConfig(
            rate_bps=rate, prop_delay_us=prop,
            loss_prob=float(rng.choice(ranges.loss_probs)),
            buffer_bdp=float(rng.uniform(*ranges.buffer_bdp)),
            square_wave=wave,
        ))
    return base.replace(links=links, duration_s=duration_s, seed=seed,
                        workload=WorkloadConfig(), learn=True)


@dataclass
class EpisodeLog:
    episode: int
    goodput_bps: float
    capacity_bps: float
    mean_reward: float
    updates: int
    epsilon: float
    wall_s: float


@dataclass
class TrainingRun:
    agent: DQNAgent
    episodes: list[EpisodeLog] = field(default_factory=list)


def train_agent(base: ScenarioConfig, episodes: int, episode_s: float = 10.0, seed: int | None = None,
                ranges: TrainingRange | None = None, agent: DQNAgent | None = None,
                time_budget_s: float | None = None) -> TrainingRun:
    """Train one agent over ``episodes`` randomised scenarios derived from ``base``.

    Each episode draws fresh link parameters (rate, delay, buffer, loss,
    optional square-wave trace). Training stops early once ``time_budget_s``
    of wall time has elapsed.
    """
    if not base.is_agent:
        raise ValueError(f"cc {base.cc!r} is not a learning agent")
    seed = base.seed if seed is None else seed
    ranges = ranges or TrainingRange()
    rng = np.random.default_rng(derive_seed(seed, "train-episodes"))
    agent = agent or make_agent(base.replace(seed=seed))
    run = TrainingRun(agent)
    start = time.perf_counter()
    for ep in range(episodes):
        cfg = randomized_config(base, rng, ranges, episode_s, derive_seed(seed, "episode", ep) % (2**31))
        t0 = time.perf_counter()
        res = run_scenario(cfg, agent=agent, learn=True)
        stats = res.engine.stats
        entry = EpisodeLog(ep, res.metrics.goodput_bps, res.metrics.capacity_bps, stats.mean_reward,
                           agent.updates, agent.epsilon(), time.perf_counter() - t0)
        run.episodes.append(entry)
        log.info("episode %d: util %.3f reward %.3f updates %d eps %.3f (%.1fs)", ep,
                 entry.goodput_bps / entry.capacity_bps if entry.capacity_bps else math.nan,
                 entry.mean_reward, entry.updates, entry.epsilon, entry.wall_s)
        if time_budget_s is not None and time.perf_counter() - start >= time_budget_s:
            break
    return run


def evaluate(cfg: ScenarioConfig, agent: DQNAgent | None, seeds) -> list[RunMetrics]:
    """Frozen-policy (or baseline) runs of ``cfg`` under each seed."""
    return [run_scenario(cfg.replace(seed=int(s)), agent=agent, learn=False).metrics for s in seeds]


def median_goodput(metrics: list[RunMetrics]) -> float:
    return float(np.median([m.goodput_bps for m in metrics]))
