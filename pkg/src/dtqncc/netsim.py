"""Deterministic discrete-event engine and point-to-point links.

Time is an integer number of microseconds. Events with equal timestamps run
in insertion order. Every random draw goes through a :class:`Rng` stream
derived from the run seed, so a run is a pure function of its config.
"""

from __future__ import annotations

import bisect
import enum
import heapq
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

MTU = 1500
US_PER_S = 1_000_000


class SchedulingError(RuntimeError):
    """An event was scheduled before the current simulation time."""


class EventLoop:
    """Min-heap event queue keyed on ``(time, insertion order)``."""

    def __init__(self, log_events: bool = False):
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.events_run = 0
        self.log: list[tuple[int, str]] | None = [] if log_events else None
        self._stopped = False
        self.after_event: Callable[[int], None] | None = None

    def schedule(self, at: int, fn: Callable, *args) -> None:
        if at < self.now:
            raise SchedulingError(f"event {getattr(fn, '__qualname__', fn)!r} scheduled at t={at} < now={self.now}")
        heapq.heappush(self._heap, (at, self._seq, fn, args))
        self._seq += 1

    def call_later(self, delay: int, fn: Callable, *args) -> None:
        self.schedule(self.now + delay, fn, *args)

    def pending(self) -> int:
        return len(self._heap)

    def stop(self) -> None:
        self._stopped = True

    def run(self, until: int | None = None, max_events: int | None = None) -> None:
        """Run events with time ``<= until`` (all events if ``until`` is None)."""
        heap = self._heap
        log = self.log
        hook = self.after_event
        self._stopped = False
        n = 0
        while heap and not self._stopped:
            if until is not None and heap[0][0] > until:
                break
            if max_events is not None and n >= max_events:
                break
            at, _, fn, args = heapq.heappop(heap)
            self.now = at
            if log is not None:
                log.append((at, fn.__qualname__))
            fn(*args)
            n += 1
            if hook is not None:
                hook(at)
        self.events_run += n
        if until is not None and not self._stopped and (not heap or heap[0][0] > until):
            self.now = max(self.now, until)


def derive_seed(root: int, *keys) -> int:
    """Stable 64-bit seed for a named sub-stream of ``root``."""
    words = [int(root) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            words.append(zlib.crc32(k.encode("utf-8")))
        else:
            words.append(int(k) & 0xFFFFFFFFFFFFFFFF)
    ss = np.random.SeedSequence(words)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class Rng:
    """PCG64 stream with a buffered scalar ``uniform()`` for per-packet draws."""

    _BLOCK = 4096

    def __init__(self, seed: int, *stream):
        self.seed = derive_seed(seed, *stream) if stream else int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))
        self._buf: list[float] = []
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self.gen.random(self._BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


@dataclass
class LinkSpec:
    rate_bps: int
    prop_delay_us: int
    loss_prob: float = 0.0
    buffer_pkts: int = 1000
    trace: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.rate_bps = int(self.rate_bps)
        self.prop_delay_us = int(self.prop_delay_us)
        self.buffer_pkts = int(self.buffer_pkts)
        self.trace = [tuple(int(x) for x in e) for e in self.trace]
        if self.rate_bps <= 0:
            raise ValueError(f"rate_bps must be > 0, got {self.rate_bps}")
        if self.prop_delay_us < 0:
            raise ValueError(f"prop_delay_us must be >= 0, got {self.prop_delay_us}")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"loss_prob must lie in [0, 1], got {self.loss_prob}")
        if self.buffer_pkts < 1:
            raise ValueError(f"buffer_pkts must be >= 1, got {self.buffer_pkts}")
        times = [e[0] for e in self.trace]
        if times != sorted(times):
            raise ValueError("trace entries must be sorted by time")
        for t, rate, delay in self.trace:
            if rate <= 0:
                raise ValueError(f"trace rate must be > 0 (entry at t={t})")
            if delay < 0:
                raise ValueError(f"trace delay must be >= 0 (entry at t={t})")

    @property
    def max_rate_bps(self) -> int:
        return max([self.rate_bps] + [e[1] for e in self.trace])

    @property
    def max_prop_delay_us(self) -> int:
        return max([self.prop_delay_us] + [e[2] for e in self.trace])


class Packet:
    __slots__ = (
        "conn_id", "subflow_id", "seq", "size_bytes", "sent_at", "is_ack", "acked_seq",
        "delivered_bytes_at_send", "delivered_time_at_send", "pn", "inflight_at_send",
        "is_retx", "probe_sample",
    )

    def __init__(self, conn_id: int, subflow_id: int, seq: int, size_bytes: int, sent_at: int,
                 is_ack: bool = False, acked_seq: int = -1, delivered_bytes_at_send: int = 0,
                 delivered_time_at_send: int = 0, pn: int = 0):
        if not 0 < size_bytes <= MTU:
            raise ValueError(f"packet size {size_bytes} outside (0, {MTU}]")
        if seq < 0:
            raise ValueError(f"negative sequence number {seq}")
        self.conn_id = conn_id
        self.subflow_id = subflow_id
        self.seq = seq
        self.size_bytes = size_bytes
        self.sent_at = sent_at
        self.is_ack = is_ack
        self.acked_seq = acked_seq
        self.delivered_bytes_at_send = delivered_bytes_at_send
        self.delivered_time_at_send = delivered_time_at_send
        self.pn = pn
        self.inflight_at_send = 0
        self.is_retx = False
        self.probe_sample = False


class Outcome(enum.Enum):
    ACCEPTED = "accepted"
    DROPPED_BUFFER_FULL = "dropped_buffer_full"
    DROPPED_RANDOM_LOSS = "dropped_random_loss"


class EnqueueResult(NamedTuple):
    outcome: Outcome
    depart_at: int | None = None
    deliver_at: int | None = None


class Link:
    """FIFO bottleneck: random loss, finite buffer, serialization, propagation.

    Reverse-direction ACKs see only the current propagation delay.
    """

    def __init__(self, spec: LinkSpec, loop: EventLoop, rng: Rng, name: str = "link"):
        self.spec = spec
        self.loop = loop
        self.rng = rng
        self.name = name
        self.rate_bps = spec.rate_bps
        self.prop_delay_us = spec.prop_delay_us
        self._trace_times = [e[0] for e in spec.trace]
        self.next_free_at = 0
        self._departs: deque[int] = deque()
        self._queued_bytes: deque[int] = deque()
        self.occupancy_bytes = 0
        self._last_deliver_at = 0
        self.enqueued = 0
        self.accepted = 0
        self.delivered = 0
        self.dropped_buffer = 0
        self.dropped_loss = 0
        self.max_occupancy = 0
        self.propagating = 0

    def rate_at(self, t: int) -> tuple[int, int]:
        """``(rate_bps, prop_delay_us)`` in force at time ``t``."""
        i = bisect.bisect_right(self._trace_times, t) - 1
        if i < 0:
            return self.spec.rate_bps, self.spec.prop_delay_us
        _, rate, delay = self.spec.trace[i]
        return rate, delay

    def apply_trace(self, now: int) -> None:
        if self._trace_times:
            self.rate_bps, self.prop_delay_us = self.rate_at(now)

    def _drain(self, now: int) -> None:
        departs = self._departs
        while departs and departs[0] <= now:
            departs.popleft()
            self.occupancy_bytes -= self._queued_bytes.popleft()
            self.propagating += 1

    def occupancy(self, now: int) -> int:
        self._drain(now)
        return len(self._departs)

    @property
    def in_queue(self) -> int:
        return len(self._departs)

    @property
    def in_flight(self) -> int:
        return self.propagating

    def serialization_us(self, size_bytes: int, rate_bps: int) -> int:
        return -(-size_bytes * 8 * US_PER_S // rate_bps)

    def enqueue(self, packet: Packet, now: int, on_deliver: Callable[[Packet], None]) -> EnqueueResult:
        if packet.size_bytes > MTU:
            raise ValueError(f"packet size {packet.size_bytes} exceeds MTU")
        self.enqueued += 1
        spec = self.spec
        if spec.loss_prob > 0.0 and self.rng.uniform() < spec.loss_prob:
            self.dropped_loss += 1
            return EnqueueResult(Outcome.DROPPED_RANDOM_LOSS)
        self._drain(now)
        if len(self._departs) >= spec.buffer_pkts:
            self.dropped_buffer += 1
            return EnqueueResult(Outcome.DROPPED_BUFFER_FULL)
        self.apply_trace(now)
        start = now if now > self.next_free_at else self.next_free_at
        depart = start + self.serialization_us(packet.size_bytes, self.rate_bps)
        self.next_free_at = depart
        deliver = depart + self.prop_delay_us
        if deliver < self._last_deliver_at:
            deliver = self._last_deliver_at
        self._last_deliver_at = deliver
        self._departs.append(depart)
        self._queued_bytes.append(packet.size_bytes)
        self.occupancy_bytes += packet.size_bytes
        self.accepted += 1
        occ = len(self._departs)
        if occ > self.max_occupancy:
            self.max_occupancy = occ
        assert occ <= spec.buffer_pkts
        self.loop.schedule(deliver, self._deliver, packet, on_deliver)
        return EnqueueResult(Outcome.ACCEPTED, depart, deliver)

    def _deliver(self, packet: Packet, on_deliver: Callable[[Packet], None]) -> None:
        self._drain(self.loop.now)
        self.delivered += 1
        self.propagating -= 1
        on_deliver(packet)

    def reverse_delay_us(self, now: int) -> int:
        self.apply_trace(now)
        return self.prop_delay_us

    def conservation_ok(self, now: int) -> bool:
        self._drain(now)
        total = self.delivered + self.dropped_buffer + self.dropped_loss + len(self._departs) + self.propagating
        return total == self.enqueued and self.propagating >= 0
