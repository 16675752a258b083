"""Run one scenario end to end and collect its metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .. import __version__
from ..agent.actions import ActionSpace
from ..agent.checkpoint import load_agent
from ..agent.dqn import DQNAgent, TrainConfig
from ..agent.engine import DecisionEngine
from ..baselines import make_baseline
from ..datapath import AgentControl, Connection, Workload
from ..netsim import MTU, EventLoop, Link, Rng, derive_seed
from ..telemetry import N_FEATURES, InProcChannel, Proxy, SocketChannel, TelemetryConfig
from .config import ScenarioConfig
from .metrics import fct_stats, integrated_capacity_bits, jfi, rtt_stats

TIMESERIES_HEADER = ("conn_id", "window_end_us", "subflow", "throughput_bps", "mean_rtt_us",
                     "ack_count", "cwnd", "target")
FLOWS_HEADER = ("conn_id", "size_bytes", "start_us", "end_us", "fct_us")
FLOW_GAP_US = 10_000


class CapacityViolation(AssertionError):
    pass


@dataclass
class RunMetrics:
    duration_s: float
    goodput_bps: float = 0.0
    capacity_bps: float = 0.0
    rtt_mean_us: float = float("nan")
    rtt_std_us: float = float("nan")
    rtt_cv: float = float("nan")
    retransmits: int = 0
    drops_random_loss: int = 0
    drops_buffer: int = 0
    subflow_goodput_bps: list = field(default_factory=list)
    fct_us: list = field(default_factory=list)
    flows: list = field(default_factory=list)
    jfi: float | None = None
    competing_goodput_bps: float | None = None
    stalls: int = 0
    skipped_invocations: int = 0
    observations_sent: int = 0
    directives: list = field(default_factory=list)
    timeseries: list = field(default_factory=list)
    events: int = 0

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("timeseries")
        d.pop("flows")
        d["directives"] = len(self.directives)
        d["fct"] = fct_stats(self.fct_us)
        d.pop("fct_us")
        return d


@dataclass
class RunResult:
    config: ScenarioConfig
    metrics: RunMetrics
    agent: DQNAgent | None = None
    engine: DecisionEngine | None = None


def telemetry_config(cfg: ScenarioConfig) -> TelemetryConfig:
    t = cfg.telemetry
    mode = t.mode or ("single" if cfg.cc == "ddqn" else "sequence")
    lat = cfg.engine.edge_latency_us
    return TelemetryConfig(
        window_us=t.window_us, mode=mode, invoke_every=t.invoke_every, single_step_k=t.single_step_k,
        uplink_us=lat, downlink_us=lat, compute_us=t.compute_us, timeout_windows=t.timeout_windows,
        expflag_period=cfg.reward.expflag_period,
    )


def agent_train_config(cfg: ScenarioConfig) -> TrainConfig:
    if cfg.cc == "ddqn":
        return TrainConfig(**{**cfg.train.to_dict(), "context_len": 1, "arch": "mlp"})
    return cfg.train


def make_agent(cfg: ScenarioConfig) -> DQNAgent:
    if cfg.checkpoint:
        return load_agent(cfg.checkpoint, seed=derive_seed(cfg.seed, "agent"))
    space = ActionSpace(cfg.n_subflows, cfg.actions.n, cfg.actions.k)
    return DQNAgent(agent_train_config(cfg), cfg.n_subflows * N_FEATURES, space.size,
                    seed=derive_seed(cfg.seed, "agent") % (2**63))


def make_engine(cfg: ScenarioConfig, agent: DQNAgent, learn: bool) -> DecisionEngine:
    space = ActionSpace(cfg.n_subflows, cfg.actions.n, cfg.actions.k)
    if agent.n_actions != space.size:
        raise ValueError(f"agent has {agent.n_actions} actions, scenario needs {space.size}")
    return DecisionEngine(agent, space, cfg.reward, learn=learn)


def run_scenario(cfg: ScenarioConfig, agent: DQNAgent | None = None, learn: bool | None = None,
                 out_dir=None) -> RunResult:
    """Simulate ``cfg`` for its duration; deterministic for a fixed config and agent state."""
    learn = cfg.learn if learn is None else learn
    duration = cfg.duration_us
    metrics = RunMetrics(duration_s=cfg.duration_s)
    loop = EventLoop()
    specs = [lc.to_spec(duration) for lc in cfg.links]
    links = [Link(spec, loop, Rng(cfg.seed, "link", i), name=f"link{i}") for i, spec in enumerate(specs)]
    path = [links[j] for j in cfg.subflow_map]

    engine = None
    channel = None
    if cfg.is_agent:
        if cfg.engine.mode == "socket":
            channel = SocketChannel.from_address(cfg.engine.address)
        else:
            agent = agent or make_agent(cfg)
            engine = make_engine(cfg, agent, learn)
            channel = InProcChannel(engine)
    tcfg = telemetry_config(cfg)

    def controller():
        return AgentControl(cfg.datapath) if cfg.is_agent else make_baseline(cfg.cc)

    conns: list[Connection] = []
    proxies: list[Proxy] = []

    def open_conn(conn_id, workload, start_at):
        conn = Connection(conn_id, loop, path, controller(), cfg.datapath, workload, start_at=start_at)
        conn.record_rtts = True
        proxy = Proxy(loop, conn, tcfg, channel, end_us=duration)
        conns.append(conn)
        proxies.append(proxy)
        return conn

    competing = None
    wl = cfg.workload
    if wl.kind == "flows":
        sizes = [s for s in wl.flow_sizes for _ in range(wl.repetitions)]
        pending = list(enumerate(sizes))

        def next_flow(prev=None, now=0):
            if not pending:
                loop.stop()
                return
            cid, size = pending.pop(0)
            start = now + (FLOW_GAP_US if prev is not None else 0)
            c = open_conn(cid, Workload(size), start)
            c.on_complete = lambda conn, t: next_flow(conn, t)

        if duration > 0 and sizes:
            next_flow()
    else:
        open_conn(0, Workload(None), 0)
        if wl.kind == "competing":
            competing = Connection(1, loop, [links[wl.competing_link]], make_baseline(wl.competing_cc),
                                   cfg.datapath, Workload(None))

    if duration > 0:
        loop.run(until=duration)
    for p in proxies:
        p.finish()
    if cfg.engine.mode == "socket" and channel is not None:
        channel.close()
    metrics.events = loop.events_run
    if duration <= 0:
        return RunResult(cfg, metrics, agent, engine)

    elapsed_s = duration / 1e6
    received = sum(c.received_bytes for c in conns)
    metrics.goodput_bps = received * 8 / elapsed_s
    used = sorted(set(cfg.subflow_map) | ({wl.competing_link} if competing else set()))
    cap_bits = sum(integrated_capacity_bits(specs[j], duration) for j in used)
    metrics.capacity_bps = cap_bits / elapsed_s
    total_bits = metrics.goodput_bps * elapsed_s + (competing.received_bytes * 8 if competing else 0)
    slack = 8 * MTU * (1 + sum(len(specs[j].trace) for j in used))
    if total_bits > cap_bits + slack:
        raise CapacityViolation(f"delivered {total_bits:.0f} bits exceeds capacity {cap_bits:.0f} bits")

    samples = [r for c in conns for r in c.rtt_samples]
    st = rtt_stats(samples)
    metrics.rtt_mean_us, metrics.rtt_std_us, metrics.rtt_cv = st["mean_us"], st["std_us"], st["cv"]
    metrics.retransmits = sum(s.retransmits for c in conns for s in c.subflows)
    metrics.drops_random_loss = sum(l.dropped_loss for l in links)
    metrics.drops_buffer = sum(l.dropped_buffer for l in links)
    m = cfg.n_subflows
    metrics.subflow_goodput_bps = [
        sum(c.subflows[i].delivered_bytes for c in conns) * 8 / elapsed_s for i in range(m)
    ]
    for c in conns:
        if c.workload.total_bytes is not None and c.completed_at is not None:
            fct = c.completed_at - c.start_at
            metrics.fct_us.append(fct)
            metrics.flows.append((c.conn_id, c.workload.total_bytes, c.start_at, c.completed_at, fct))
    if competing is not None:
        metrics.competing_goodput_bps = competing.received_bytes * 8 / elapsed_s
        on_link = sum(g for g, j in zip(metrics.subflow_goodput_bps, cfg.subflow_map) if j == wl.competing_link)
        shares = [on_link, metrics.competing_goodput_bps]
        metrics.jfi = jfi(shares) if any(shares) else None
    for p in proxies:
        metrics.stalls += p.stalls
        metrics.skipped_invocations += p.skipped
        metrics.observations_sent += p.observations_sent
        metrics.directives.extend((p.conn.conn_id, d.step, d.issued_at, d.apply_at, list(d.targets)) for d in p.directives)
        for window in p.windows:
            for a in window:
                metrics.timeseries.append((p.conn.conn_id, a.window_end, a.subflow_id, a.mean_throughput_bps,
                                           a.mean_rtt_us, a.ack_count, a.cwnd_at_close, a.target_at_close))
    result = RunResult(cfg, metrics, agent, engine)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


# -- persistence ---------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def _json_safe(obj):
    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def summary_dict(result: RunResult) -> dict:
    cfg = result.config
    return _json_safe({
        "version": __version__,
        "config_sha1": cfg.content_hash(),
        "config": cfg.to_dict(),
        "metrics": result.metrics.summary(),
    })


def write_outputs(result: RunResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "timeseries": out / "timeseries.csv",
        "flows": out / "flows.csv",
        "summary": out / "summary.json",
    }
    m = result.metrics
    paths["timeseries"].write_text(csv_text(TIMESERIES_HEADER, m.timeseries), encoding="utf-8")
    paths["flows"].write_text(csv_text(FLOWS_HEADER, m.flows), encoding="utf-8")
    paths["summary"].write_text(json.dumps(summary_dict(result), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
