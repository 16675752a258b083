"""Multipath connection datapath.

A :class:`Connection` owns M subflows, each bound to a :class:`~dtqncc.netsim.Link`.
New data is placed by the minRTT scheduler onto the lowest-srtt subflow
that passes the availability check; lost packets are retransmitted on the
subflow that lost them. A pluggable controller owns cwnd: the classical
baselines, or :class:`AgentControl`, which runs the START / TRAIN / PROBE
phases and enforces targets supplied by an external decision engine.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import kernels
from .netsim import MTU, US_PER_S, EventLoop, Link, Packet


class Mode(enum.Enum):
    OPEN = "open"
    RECOVERY = "recovery"


class Phase(enum.Enum):
    START = "start"
    TRAIN = "train"
    PROBE = "probe"


class NoSubflowAvailable(ValueError):
    """Raised by the coupling model when every subflow fails the availability check."""


@dataclass
class DatapathConfig:
    cwnd_min: int = 4
    cwnd_max_bdp: float = 4.0
    cwnd_max: int | None = None
    initial_cwnd: int = 10
    start_exit_cwnd: int = 16
    start_stable_acks: int = 8
    probe_enabled: bool = True
    probe_interval_us: int = 5 * US_PER_S
    probe_cwnd: int = 4
    min_rtt_lifetime_us: int = 10 * US_PER_S
    max_rate_window_us: int = 10 * US_PER_S
    dupack_threshold: int = 3
    rto_min_us: int = 200_000
    srtt_gain: float = 0.125
    # Release new data at gain * cwnd / srtt; None sends as soon as the window allows.
    agent_pacing_gain: float | None = 1.25
    baseline_pacing_gain: float | None = None


@dataclass(slots=True)
class SubflowState:
    subflow_id: int
    cwnd_pkts: int
    cwnd_min: int
    cwnd_max: int
    queued_pkts: int = 0
    mode: Mode = Mode.OPEN
    phase: Phase = Phase.START
    srtt_us: float = 0.0
    last_rtt_us: int = 0
    min_rtt_us: int = 0
    min_rtt_at: int = 0
    min_rtt_stale: bool = False
    base_rtt_us: int = 0
    max_delivery_rate_bps: float = 0.0
    max_rate_at: int = 0
    delivered_bytes: int = 0
    delivered_at: int = 0
    expflag_counter: int = 0
    target_cwnd: int = 0
    saved_target: int = 0
    clean_acks: int = 0
    last_probe_at: int = 0
    probe_started_at: int = -1
    next_pn: int = 0
    largest_acked: int = -1
    outstanding: dict = field(default_factory=dict)
    recovery_retx: set = field(default_factory=set)
    rto_armed: bool = False
    unknown_acks: int = 0
    retransmits: int = 0
    losses: int = 0
    rto_count: int = 0
    clamped_targets: int = 0
    sent_packets: int = 0
    pacing_queue: deque = field(default_factory=deque)
    next_release_at: int = 0
    release_scheduled: bool = False

    @property
    def inflight_pkts(self) -> int:
        return len(self.outstanding)


@dataclass(frozen=True, slots=True)
class AckRecord:
    subflow_id: int
    rtt_us: int
    delivered_bytes_delta: int
    delivery_rate_bps: float
    at: int


def availability(s: SubflowState) -> bool:
    """True iff the subflow has window headroom and is not recovering."""
    return s.cwnd_pkts > s.queued_pkts + s.inflight_pkts and s.mode is not Mode.RECOVERY


def pick_subflow(subflows: Sequence[SubflowState]) -> int | None:
    """minRTT choice among available subflows; ``None`` if none is available."""
    i = kernels.pick_min_rtt(
        [s.cwnd_pkts for s in subflows],
        [s.queued_pkts for s in subflows],
        [s.inflight_pkts for s in subflows],
        [s.mode is Mode.RECOVERY for s in subflows],
        [s.srtt_us for s in subflows],
    )
    return None if i < 0 else i


def allocation_probability(subflows: Sequence[SubflowState], i: int) -> float:
    """Coupling model: indicator of subflow ``i`` holding the minimum available RTT,
    divided by the number of available subflows.

    Taken literally, so the values need not sum to one across subflows.
    """
    avail = [availability(s) for s in subflows]
    n_avail = sum(avail)
    if n_avail == 0:
        raise NoSubflowAvailable("no subflow passes the availability check")
    best = min(s.srtt_us for s, a in zip(subflows, avail) if a)
    hit = avail[i] and subflows[i].srtt_us == best
    return (1.0 if hit else 0.0) / n_avail


def assigned_load(subflows: Sequence[SubflowState], i: int, total_rate_bps: float) -> float:
    return total_rate_bps * allocation_probability(subflows, i)


def enforce_cwnd(s: SubflowState, target_pkts: int) -> None:
    """Store a cwnd target. Lower targets apply at once; higher ones ramp per ACK."""
    t = int(target_pkts)
    if t < s.cwnd_min or t > s.cwnd_max:
        s.clamped_targets += 1
        t = min(max(t, s.cwnd_min), s.cwnd_max)
    s.target_cwnd = t
    if s.phase is Phase.PROBE:
        s.saved_target = t
    elif s.phase is Phase.TRAIN and s.cwnd_pkts > t:
        s.cwnd_pkts = t


def start_phase_step(s: SubflowState, cfg: DatapathConfig) -> bool:
    """Slow-start growth for one clean ACK; True when the subflow leaves START."""
    if s.cwnd_pkts < s.cwnd_max:
        s.cwnd_pkts += 1
    s.clean_acks += 1
    if s.cwnd_pkts >= cfg.start_exit_cwnd and s.clean_acks >= cfg.start_stable_acks:
        s.phase = Phase.TRAIN
        s.target_cwnd = s.cwnd_pkts
        return True
    return False


def probe_cycle(s: SubflowState, now: int, cfg: DatapathConfig) -> None:
    """Enter PROBE: clamp cwnd so the path queue drains and a clean RTT can be sampled."""
    s.phase = Phase.PROBE
    s.saved_target = s.target_cwnd
    s.probe_started_at = now
    s.last_probe_at = now
    s.cwnd_pkts = min(s.cwnd_pkts, max(cfg.probe_cwnd, s.cwnd_min))


def finish_probe(s: SubflowState, rtt_us: int, now: int) -> None:
    s.min_rtt_us = rtt_us
    s.min_rtt_at = now
    s.min_rtt_stale = False
    s.base_rtt_us = rtt_us
    s.phase = Phase.TRAIN
    s.cwnd_pkts = s.saved_target
    s.target_cwnd = s.saved_target
    s.probe_started_at = -1


class Controller:
    """cwnd policy hooks; the datapath handles everything else."""

    external = False

    def attach(self, conn: "Connection") -> None:
        self.conn = conn

    def init_subflow(self, s: SubflowState, now: int) -> None:
        pass

    def on_ack(self, s: SubflowState, pkt: Packet, rtt_us: int, now: int) -> None:
        pass

    def on_loss_event(self, s: SubflowState, now: int) -> None:
        pass

    def on_rto(self, s: SubflowState, now: int) -> None:
        pass

    def on_recovery_exit(self, s: SubflowState, now: int) -> None:
        pass


class AgentControl(Controller):
    """Datapath side of external control: START, then targets from the engine, periodic PROBE."""

    external = True

    def __init__(self, cfg: DatapathConfig | None = None):
        self.cfg = cfg or DatapathConfig()

    def on_ack(self, s, pkt, rtt_us, now):
        cfg = self.cfg
        phase = s.phase
        if phase is Phase.START:
            if start_phase_step(s, cfg):
                s.last_probe_at = now
                self.conn.emit_phase(s, Phase.START, Phase.TRAIN, now)
            return
        if phase is Phase.PROBE:
            if pkt.probe_sample and not pkt.is_retx and pkt.sent_at >= s.probe_started_at:
                finish_probe(s, rtt_us, now)
                self.conn.emit_phase(s, Phase.PROBE, Phase.TRAIN, now)
            return
        if s.cwnd_pkts < s.target_cwnd:
            s.cwnd_pkts += 1
        if cfg.probe_enabled and (s.min_rtt_stale or now - s.last_probe_at >= cfg.probe_interval_us):
            probe_cycle(s, now, cfg)
            self.conn.emit_phase(s, Phase.TRAIN, Phase.PROBE, now)

    def on_loss_event(self, s, now):
        if s.phase is Phase.START:
            s.clean_acks = 0

    def on_rto(self, s, now):
        if s.phase is Phase.START:
            s.clean_acks = 0


class Workload:
    """Data source for a connection: unbounded bulk or a single finite flow."""

    def __init__(self, total_bytes: int | None = None):
        self.total_bytes = total_bytes
        self.next_seq = 0

    def has_data(self) -> bool:
        return self.total_bytes is None or self.next_seq < self.total_bytes

    def take(self) -> tuple[int, int]:
        seq = self.next_seq
        size = MTU if self.total_bytes is None else min(MTU, self.total_bytes - seq)
        self.next_seq += size
        return seq, size


class Connection:
    """Sender, receiver and ACK path of one multipath connection."""

    def __init__(
        self,
        conn_id: int,
        loop: EventLoop,
        links: Sequence[Link],
        controller: Controller,
        cfg: DatapathConfig | None = None,
        workload: Workload | None = None,
        cwnd_max: Sequence[int] | None = None,
        start_at: int = 0,
        on_ack_record: Callable[[AckRecord], None] | None = None,
        on_phase: Callable[[int, Phase, Phase, int], None] | None = None,
        on_complete: Callable[["Connection", int], None] | None = None,
    ):
        if len(links) < 1:
            raise ValueError("a connection needs at least one subflow")
        self.conn_id = conn_id
        self.loop = loop
        self.links = list(links)
        self.cfg = cfg or DatapathConfig()
        self.workload = workload or Workload()
        self.controller = controller
        self.on_ack_record = on_ack_record
        self.on_phase = on_phase
        self.on_complete = on_complete
        self.start_at = start_at
        cfg = self.cfg
        self.subflows: list[SubflowState] = []
        for i, link in enumerate(self.links):
            cmax = cwnd_max[i] if cwnd_max is not None else (cfg.cwnd_max or default_cwnd_max(link, cfg))
            cmax = max(int(cmax), cfg.cwnd_min + 1)
            s = SubflowState(
                subflow_id=i,
                cwnd_pkts=min(max(cfg.initial_cwnd, cfg.cwnd_min), cmax),
                cwnd_min=cfg.cwnd_min,
                cwnd_max=cmax,
            )
            self.subflows.append(s)
        self.received: set[int] = set()
        self.received_bytes = 0
        self.acked_data: set[int] = set()
        self.acked_data_bytes = 0
        self.new_bytes_sent = 0
        self.assigned_bytes = [0] * len(self.subflows)
        self.completed_at: int | None = None
        self.rtt_samples: list[int] = []
        self.record_rtts = False
        self.pacing_gain = cfg.agent_pacing_gain if controller.external else cfg.baseline_pacing_gain
        controller.attach(self)
        loop.schedule(start_at, self._start)

    # -- setup ---------------------------------------------------------------

    def _start(self) -> None:
        now = self.loop.now
        for s in self.subflows:
            s.delivered_at = now
            s.last_probe_at = now
            self.controller.init_subflow(s, now)
        self.try_send()

    def emit_phase(self, s: SubflowState, old: Phase, new: Phase, now: int) -> None:
        if self.on_phase is not None:
            self.on_phase(s.subflow_id, old, new, now)

    # -- sending -------------------------------------------------------------

    @property
    def offered_load_bps(self) -> float:
        elapsed = self.loop.now - self.start_at
        return self.new_bytes_sent * 8 * US_PER_S / elapsed if elapsed > 0 else 0.0

    def try_send(self) -> None:
        if self.completed_at is not None:
            return
        wl = self.workload
        subflows = self.subflows
        while wl.has_data():
            i = pick_subflow(subflows)
            if i is None:
                break
            seq, size = wl.take()
            self.new_bytes_sent += size
            self.assigned_bytes[i] += size
            s = subflows[i]
            if self.pacing_gain is None or s.srtt_us <= 0:
                self._transmit(s, seq, size, retx=False)
            else:
                s.pacing_queue.append((seq, size))
                s.queued_pkts += 1
                if not s.release_scheduled:
                    s.release_scheduled = True
                    self.loop.schedule(max(s.next_release_at, self.loop.now), self._release, s)

    def _release(self, s: SubflowState) -> None:
        """Pacer: move one queued packet onto the link, then wait one pacing interval."""
        s.release_scheduled = False
        if not s.pacing_queue:
            return
        seq, size = s.pacing_queue.popleft()
        s.queued_pkts -= 1
        now = self.loop.now
        self._transmit(s, seq, size, retx=False)
        rate_bps = self.pacing_gain * s.cwnd_pkts * MTU * 8 * US_PER_S / s.srtt_us
        s.next_release_at = now + max(1, int(size * 8 * US_PER_S / rate_bps))
        if s.pacing_queue:
            s.release_scheduled = True
            self.loop.schedule(s.next_release_at, self._release, s)

    def _transmit(self, s: SubflowState, seq: int, size: int, retx: bool) -> None:
        now = self.loop.now
        pkt = Packet(self.conn_id, s.subflow_id, seq, size, now,
                     delivered_bytes_at_send=s.delivered_bytes,
                     delivered_time_at_send=s.delivered_at, pn=s.next_pn)
        s.next_pn += 1
        s.outstanding[pkt.pn] = pkt
        s.sent_packets += 1
        pkt.inflight_at_send = len(s.outstanding)
        pkt.is_retx = retx
        if s.phase is Phase.PROBE and pkt.inflight_at_send <= self.cfg.probe_cwnd:
            pkt.probe_sample = True
        if retx:
            s.retransmits += 1
        self.links[s.subflow_id].enqueue(pkt, now, self._on_data_arrival)
        if not s.rto_armed:
            self._arm_rto(s)

    # -- receiver side -------------------------------------------------------

    def _on_data_arrival(self, pkt: Packet) -> None:
        if pkt.seq not in self.received:
            self.received.add(pkt.seq)
            self.received_bytes += pkt.size_bytes
        link = self.links[pkt.subflow_id]
        now = self.loop.now
        self.loop.schedule(now + link.reverse_delay_us(now), self.on_ack, pkt)

    # -- ACK processing ------------------------------------------------------

    def on_ack(self, pkt: Packet) -> AckRecord | None:
        now = self.loop.now
        s = self.subflows[pkt.subflow_id]
        if pkt.seq not in self.acked_data:
            self.acked_data.add(pkt.seq)
            self.acked_data_bytes += pkt.size_bytes
        if s.outstanding.pop(pkt.pn, None) is None:
            s.unknown_acks += 1
            self._check_complete(now)
            self.try_send()
            return None
        cfg = self.cfg
        rtt = now - pkt.sent_at
        if rtt <= 0:
            rtt = 1
        if self.record_rtts:
            self.rtt_samples.append(rtt)
        s.last_rtt_us = rtt
        s.srtt_us = float(rtt) if s.srtt_us == 0.0 else s.srtt_us + cfg.srtt_gain * (rtt - s.srtt_us)
        s.delivered_bytes += pkt.size_bytes
        interval = now - pkt.delivered_time_at_send
        rate = (s.delivered_bytes - pkt.delivered_bytes_at_send) * 8 * US_PER_S / interval if interval > 0 else 0.0
        s.delivered_at = now
        if rate >= s.max_delivery_rate_bps or now - s.max_rate_at > cfg.max_rate_window_us:
            s.max_delivery_rate_bps = rate
            s.max_rate_at = now
        if s.min_rtt_us == 0 or rtt <= s.min_rtt_us:
            s.min_rtt_us = rtt
            s.min_rtt_at = now
            s.min_rtt_stale = False
            if s.base_rtt_us == 0:
                s.base_rtt_us = rtt
        elif now - s.min_rtt_at > cfg.min_rtt_lifetime_us:
            # Expired: adopt the current sample and ask for a probe to refresh it.
            s.min_rtt_us = rtt
            s.min_rtt_at = now
            s.min_rtt_stale = True
        if pkt.pn > s.largest_acked:
            s.largest_acked = pkt.pn
        if s.mode is Mode.RECOVERY and pkt.pn in s.recovery_retx:
            s.recovery_retx.discard(pkt.pn)
        self._detect_losses(s, now)
        if s.mode is Mode.RECOVERY and not s.recovery_retx:
            s.mode = Mode.OPEN
            self.controller.on_recovery_exit(s, now)
        self.controller.on_ack(s, pkt, rtt, now)
        record = AckRecord(s.subflow_id, rtt, pkt.size_bytes, rate, now)
        if self.on_ack_record is not None:
            self.on_ack_record(record)
        self._check_complete(now)
        self.try_send()
        return record

    def _detect_losses(self, s: SubflowState, now: int) -> None:
        limit = s.largest_acked - self.cfg.dupack_threshold
        if limit < 0 or not s.outstanding:
            return
        lost = []
        for pn in s.outstanding:
            if pn > limit:
                break
            lost.append(pn)
        if lost:
            self.on_loss(s.subflow_id, now, [s.outstanding.pop(pn) for pn in lost])

    def on_loss(self, subflow_id: int, now: int, lost: list[Packet] | None = None, rto: bool = False) -> None:
        """Enter (or extend) loss recovery and retransmit the lost packets on the same subflow."""
        s = self.subflows[subflow_id]
        entering = s.mode is Mode.OPEN
        s.mode = Mode.RECOVERY
        if rto:
            s.rto_count += 1
            self.controller.on_rto(s, now)
        elif entering:
            self.controller.on_loss_event(s, now)
        for pkt in lost or ():
            s.losses += 1
            s.recovery_retx.discard(pkt.pn)
            if pkt.seq in self.acked_data:
                continue
            pn = s.next_pn
            self._transmit(s, pkt.seq, pkt.size_bytes, retx=True)
            s.recovery_retx.add(pn)
        if not s.recovery_retx:
            s.mode = Mode.OPEN
            self.controller.on_recovery_exit(s, now)

    # -- retransmission timeout ---------------------------------------------

    def rto_us(self, s: SubflowState) -> int:
        return max(self.cfg.rto_min_us, int(2 * s.srtt_us))

    def _arm_rto(self, s: SubflowState) -> None:
        if not s.outstanding:
            s.rto_armed = False
            return
        oldest = next(iter(s.outstanding.values()))
        deadline = max(oldest.sent_at + self.rto_us(s), self.loop.now)
        s.rto_armed = True
        self.loop.schedule(deadline, self._rto_fire, s)

    def _rto_fire(self, s: SubflowState) -> None:
        s.rto_armed = False
        if not s.outstanding or self.completed_at is not None:
            return
        now = self.loop.now
        oldest = next(iter(s.outstanding.values()))
        if oldest.sent_at + self.rto_us(s) > now:
            self._arm_rto(s)
            return
        lost = list(s.outstanding.values())
        s.outstanding.clear()
        s.recovery_retx.clear()
        self.on_loss(s.subflow_id, now, lost, rto=True)
        self.try_send()
        if not s.rto_armed:
            self._arm_rto(s)

    # -- completion ----------------------------------------------------------

    def _check_complete(self, now: int) -> None:
        wl = self.workload
        if (self.completed_at is None and wl.total_bytes is not None
                and self.acked_data_bytes >= wl.total_bytes):
            self.completed_at = now
            if self.on_complete is not None:
                self.on_complete(self, now)


def default_cwnd_max(link: Link, cfg: DatapathConfig) -> int:
    """``cwnd_max_bdp`` x the link BDP at its peak rate, in packets."""
    spec = link.spec
    bdp = spec.max_rate_bps * 2 * spec.max_prop_delay_us / (8 * MTU * US_PER_S)
    return max(cfg.cwnd_min + 1, int(round(cfg.cwnd_max_bdp * bdp)))
