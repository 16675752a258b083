"""User-space proxy between the datapath and the decision engine.

The proxy folds per-ACK records into fixed observation windows, turns each
window into normalised per-subflow feature vectors, decides when the engine
is invoked, and applies the engine's cwnd targets after the configured
uplink and downlink latency. The engine is reached through a channel: either
an in-process call or the framed-JSON protocol over a stream socket.
"""

from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from . import wire
from .datapath import Connection, Phase, enforce_cwnd
from .netsim import US_PER_S, EventLoop
from .reward import ExpFlag

log = logging.getLogger(__name__)

N_FEATURES = 6
FEATURE_NAMES = ("throughput", "rtt", "cwnd", "bw_estimate", "base_delay", "expflag")
FEATURE_CLIP = 4.0


@dataclass
class TelemetryConfig:
    window_us: int = 10_000
    mode: str = "sequence"
    invoke_every: int | None = None
    single_step_k: int = 5
    uplink_us: int = 0
    downlink_us: int = 0
    compute_us: int = 0
    timeout_windows: int = 10
    expflag_period: int = 6

    def __post_init__(self):
        if self.window_us <= 0:
            raise ValueError("window_us must be > 0")
        if self.mode not in ("sequence", "single"):
            raise ValueError(f"mode must be 'sequence' or 'single', got {self.mode!r}")
        if self.invoke_every is not None and self.invoke_every < 1:
            raise ValueError("invoke_every must be >= 1")
        if self.uplink_us < 0 or self.downlink_us < 0 or self.compute_us < 0:
            raise ValueError("latencies must be >= 0")

    @property
    def period(self) -> int:
        if self.invoke_every is not None:
            return self.invoke_every
        return 1 if self.mode == "sequence" else self.single_step_k

    @property
    def round_trip_us(self) -> int:
        return self.uplink_us + self.downlink_us + self.compute_us


@dataclass
class WindowAggregate:
    subflow_id: int
    window_start: int
    window_end: int
    delivered_bytes: int = 0
    rtt_sum: float = 0.0
    ack_count: int = 0
    mean_throughput_bps: float = 0.0
    mean_rtt_us: float = 0.0
    cwnd_at_close: int = 0
    target_at_close: int = 0
    min_rtt_us: int = 0
    base_rtt_us: int = 0
    max_delivery_rate_bps: float = 0.0


@dataclass
class ObservationVector:
    throughput: float
    rtt: float
    cwnd: float
    bw_estimate: float
    base_delay: float
    expflag: int

    def as_list(self) -> list[float]:
        return [self.throughput, self.rtt, self.cwnd, self.bw_estimate, self.base_delay, float(self.expflag)]


@dataclass
class ConnectionObservation:
    step: int
    at: int
    subflows: list[ObservationVector]
    aggregates: list[WindowAggregate]

    def flat(self) -> list[float]:
        out: list[float] = []
        for v in self.subflows:
            out.extend(v.as_list())
        return out


@dataclass
class ControlDirective:
    step: int
    targets: list[int]
    issued_at: int
    apply_at: int
    action: int = -1


class EngineChannel(Protocol):
    def request(self, msg) -> object | None: ...

    def close(self) -> None: ...


class InProcChannel:
    """Direct call into an engine object exposing ``handle(msg)``."""

    def __init__(self, engine):
        self.engine = engine

    def request(self, msg):
        return self.engine.handle(msg)

    def close(self) -> None:
        pass


class SocketChannel:
    """Client side of the framed-JSON protocol; one outstanding request at a time."""

    def __init__(self, host: str, port: int, timeout_s: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout_s)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @classmethod
    def from_address(cls, addr: str, timeout_s: float = 10.0) -> "SocketChannel":
        host, _, port = addr.rpartition(":")
        return cls(host or "127.0.0.1", int(port), timeout_s)

    def request(self, msg):
        try:
            wire.send_message(self.sock, msg)
            return wire.recv_message(self.sock)
        except (OSError, wire.FrameError) as exc:
            log.warning("engine request failed: %s", exc)
            return None

    def close(self) -> None:
        self.sock.close()


class EngineServer:
    """Serves an engine over TCP in a background thread, one client at a time until EOF."""

    def __init__(self, engine, host: str = "127.0.0.1", port: int = 0):
        self.engine = engine
        self._lock = threading.Lock()
        self.listener = socket.create_server((host, port))
        self.address = self.listener.getsockname()
        self._thread: threading.Thread | None = None
        self._closing = False

    @property
    def addr(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def start(self) -> "EngineServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        while not self._closing:
            try:
                conn, _ = self.listener.accept()
            except OSError:
                return
            with conn:
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._serve(conn)

    def _serve(self, conn) -> None:
        while True:
            try:
                msg = wire.recv_message(conn)
            except (OSError, wire.FrameError) as exc:
                log.warning("dropping engine client: %s", exc)
                return
            if msg is None:
                return
            with self._lock:
                reply = self.engine.handle(msg)
            if reply is None:
                reply = wire.Bye("no reply")
            wire.send_message(conn, reply)

    def close(self) -> None:
        self._closing = True
        self.listener.close()


def merge_aggregates(aggs: Sequence[WindowAggregate]) -> WindowAggregate:
    """Combine consecutive windows of one subflow into a single aggregate."""
    first, last = aggs[0], aggs[-1]
    out = WindowAggregate(first.subflow_id, first.window_start, last.window_end)
    out.delivered_bytes = sum(a.delivered_bytes for a in aggs)
    out.rtt_sum = sum(a.rtt_sum for a in aggs)
    out.ack_count = sum(a.ack_count for a in aggs)
    span = out.window_end - out.window_start
    out.mean_throughput_bps = out.delivered_bytes * 8 * US_PER_S / span
    out.mean_rtt_us = out.rtt_sum / out.ack_count if out.ack_count else last.mean_rtt_us
    for name in ("cwnd_at_close", "target_at_close", "min_rtt_us", "base_rtt_us", "max_delivery_rate_bps"):
        setattr(out, name, getattr(last, name))
    return out


class Proxy:
    """Observation windows, invocation control and directive delivery for one connection.

    Without a channel the proxy only records windows (used for baseline runs).
    """

    def __init__(
        self,
        loop: EventLoop,
        conn: Connection,
        cfg: TelemetryConfig | None = None,
        channel: EngineChannel | None = None,
        bw_ceiling_bps: Sequence[float] | None = None,
        rtt_ceiling_us: Sequence[float] | None = None,
        end_us: int | None = None,
    ):
        self.loop = loop
        self.conn = conn
        self.cfg = cfg or TelemetryConfig()
        self.channel = channel
        m = len(conn.subflows)
        links = conn.links
        self.bw_ceiling = list(bw_ceiling_bps or [l.spec.max_rate_bps for l in links])
        self.rtt_ceiling = list(rtt_ceiling_us or [10.0 * max(l.spec.max_prop_delay_us, 1) for l in links])
        if min(self.bw_ceiling) <= 0 or min(self.rtt_ceiling) <= 0:
            raise ValueError("normalisation ceilings must be > 0")
        self.end_us = end_us
        self.step = 0
        self.window_start = conn.start_at
        self._acc = [[0, 0.0, 0] for _ in range(m)]
        self._last_rtt = [0.0] * m
        self.windows: list[list[WindowAggregate]] = []
        self._pending: list[list[WindowAggregate]] = []
        self.expflags = [ExpFlag(self.cfg.expflag_period) for _ in range(m)]
        self.directives: list[ControlDirective] = []
        self.observations_sent = 0
        self.skipped = 0
        self.stalls = 0
        self.total_acked_bytes = 0
        self._outstanding: int | None = None
        self._last_targets: list[int] | None = None
        self.control_active = False
        self.finished = False
        conn.on_ack_record = self.record
        loop.schedule(conn.start_at + self.cfg.window_us, self._on_window)
        if channel is not None:
            hello = wire.Hello(conn.conn_id, m, N_FEATURES, self.cfg.mode)
            channel.request(hello)

    # -- ACK intake ----------------------------------------------------------

    def record(self, rec) -> None:
        a = self._acc[rec.subflow_id]
        a[0] += rec.delivered_bytes_delta
        a[1] += rec.rtt_us
        a[2] += 1
        self.total_acked_bytes += rec.delivered_bytes_delta

    # -- windows -------------------------------------------------------------

    def _on_window(self) -> None:
        if self.finished:
            return
        now = self.loop.now
        obs = self.close_window(now)
        if self.conn.completed_at is not None:
            self.finish()
            return
        if self.end_us is None or now + self.cfg.window_us <= self.end_us:
            self.loop.schedule(now + self.cfg.window_us, self._on_window)
        if self.channel is None:
            return
        if not self.control_active:
            self.control_active = all(s.phase is not Phase.START for s in self.conn.subflows)
            if not self.control_active:
                self._pending.clear()
                return
        if self.should_invoke():
            self.dispatch(self._merged_observation(obs))

    def close_window(self, now: int) -> ConnectionObservation:
        start = self.window_start
        if now <= start:
            raise ValueError("window must have positive length")
        aggs = []
        for s, a in zip(self.conn.subflows, self._acc):
            i = s.subflow_id
            delivered, rtt_sum, n = a
            mean_rtt = rtt_sum / n if n else (self._last_rtt[i] or s.srtt_us)
            self._last_rtt[i] = mean_rtt
            aggs.append(WindowAggregate(
                subflow_id=i, window_start=start, window_end=now,
                delivered_bytes=delivered, rtt_sum=rtt_sum, ack_count=n,
                mean_throughput_bps=delivered * 8 * US_PER_S / (now - start),
                mean_rtt_us=mean_rtt, cwnd_at_close=s.cwnd_pkts, target_at_close=s.target_cwnd,
                min_rtt_us=s.min_rtt_us, base_rtt_us=s.base_rtt_us,
                max_delivery_rate_bps=s.max_delivery_rate_bps,
            ))
            a[0], a[1], a[2] = 0, 0.0, 0
        self.window_start = now
        self.windows.append(aggs)
        self._pending.append(aggs)
        self.step += 1
        return self.observe(aggs, now)

    def observe(self, aggs: Sequence[WindowAggregate], now: int) -> ConnectionObservation:
        vecs = []
        for agg, s in zip(aggs, self.conn.subflows):
            i = agg.subflow_id
            bw, rc = self.bw_ceiling[i], self.rtt_ceiling[i]
            vecs.append(ObservationVector(
                throughput=_clip(agg.mean_throughput_bps / bw),
                rtt=_clip(agg.mean_rtt_us / rc),
                cwnd=_clip(agg.cwnd_at_close / s.cwnd_max),
                bw_estimate=_clip(agg.max_delivery_rate_bps / bw),
                base_delay=_clip(agg.min_rtt_us / rc),
                expflag=self.expflags[i].flag,
            ))
        return ConnectionObservation(self.step, now, vecs, list(aggs))

    def should_invoke(self) -> bool:
        return self.step % self.cfg.period == 0

    def _merged_observation(self, latest: ConnectionObservation) -> ConnectionObservation:
        pending = self._pending
        self._pending = []
        if len(pending) <= 1:
            return latest
        merged = [merge_aggregates([w[i] for w in pending]) for i in range(len(latest.subflows))]
        return self.observe(merged, latest.at)

    # -- engine round trip ---------------------------------------------------

    def to_message(self, obs: ConnectionObservation, done: bool = False) -> wire.Observation:
        raw = []
        for agg, s in zip(obs.aggregates, self.conn.subflows):
            raw.append({
                "mean_rtt_us": float(agg.mean_rtt_us),
                "min_rtt_us": int(agg.min_rtt_us),
                "base_rtt_us": int(agg.base_rtt_us),
                "throughput_bps": float(agg.mean_throughput_bps),
                "bw_ceiling_bps": float(self.bw_ceiling[agg.subflow_id]),
                "ack_count": int(agg.ack_count),
                "cwnd": int(agg.cwnd_at_close),
                "target": int(s.target_cwnd),
                "cwnd_min": int(s.cwnd_min),
                "cwnd_max": int(s.cwnd_max),
                "expflag": int(self.expflags[agg.subflow_id].flag),
            })
        return wire.Observation(obs.step, obs.at, [v.as_list() for v in obs.subflows], raw, done)

    def dispatch(self, obs: ConnectionObservation) -> None:
        """Send ``obs`` to the engine; its directive lands after the round-trip latency."""
        if self._outstanding is not None:
            self.skipped += 1
            return
        self._outstanding = obs.step
        self.observations_sent += 1
        cfg = self.cfg
        msg = self.to_message(obs)
        issued = obs.at
        self.loop.schedule(issued + cfg.uplink_us, self._engine_receive, msg, issued)
        deadline = issued + cfg.timeout_windows * cfg.window_us
        self.loop.schedule(deadline, self._check_timeout, obs.step)

    def _engine_receive(self, msg: wire.Observation, issued: int) -> None:
        if self._outstanding != msg.step:
            return
        reply = self.channel.request(msg)
        if not isinstance(reply, wire.Directive):
            self.stalls += 1
            self._outstanding = None
            return
        apply_at = issued + self.cfg.round_trip_us
        d = ControlDirective(msg.step, [int(t) for t in reply.targets], issued, apply_at, reply.action)
        self.loop.schedule(max(apply_at, self.loop.now), self._apply, d)

    def _check_timeout(self, step: int) -> None:
        if self._outstanding == step:
            self.stalls += 1
            self._outstanding = None

    def _apply(self, d: ControlDirective) -> None:
        if self._outstanding != d.step:
            return
        self._outstanding = None
        subs = self.conn.subflows
        if len(d.targets) != len(subs):
            log.warning("directive for step %d has %d targets, expected %d", d.step, len(d.targets), len(subs))
            self.stalls += 1
            return
        prev = self._last_targets or [s.target_cwnd for s in subs]
        for s, t, p, ef in zip(subs, d.targets, prev, self.expflags):
            enforce_cwnd(s, t)
            ef.step(s.target_cwnd > p)
            s.expflag_counter = ef.steps_since_increase
        self._last_targets = [s.target_cwnd for s in subs]
        self.directives.append(d)
        self.conn.try_send()

    def finish(self) -> None:
        """Stop the window clock and tell the engine the episode ended."""
        if self.finished:
            return
        self.finished = True
        if self.channel is not None:
            self.channel.request(wire.Bye("episode end"))


def _clip(x: float) -> float:
    if x != x or x < 0.0:
        return 0.0
    return x if x < FEATURE_CLIP else FEATURE_CLIP
