"""Classical congestion controllers driving cwnd through the datapath hooks.

Reno and CUBIC act per subflow; LIA couples the additive increase across
the subflows of a connection. All three share the datapath's loss
detection and recovery gating, and keep cwnd inside ``[cwnd_min, cwnd_max]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .datapath import Controller, Mode, SubflowState
from .netsim import US_PER_S


def _clamp(w: float, s: SubflowState) -> int:
    return int(min(max(w, s.cwnd_min), s.cwnd_max))


class _LossBased(Controller):
    """Slow start plus integer additive increase in the style of the Linux stack."""

    def attach(self, conn):
        super().attach(conn)
        n = len(conn.subflows)
        self.ssthresh = [math.inf] * n
        self.cnt = [0.0] * n

    def slow_start(self, s: SubflowState) -> bool:
        return s.cwnd_pkts < self.ssthresh[s.subflow_id]

    def on_ack(self, s, pkt, rtt_us, now):
        if s.mode is Mode.RECOVERY:
            return
        if self.slow_start(s):
            s.cwnd_pkts = _clamp(s.cwnd_pkts + 1, s)
            return
        self.avoid(s, now)

    def avoid(self, s: SubflowState, now: int) -> None:
        raise NotImplementedError

    def on_rto(self, s, now):
        i = s.subflow_id
        self.ssthresh[i] = max(s.cwnd_pkts / 2, s.cwnd_min)
        self.cnt[i] = 0.0
        s.cwnd_pkts = s.cwnd_min


class Reno(_LossBased):
    def avoid(self, s, now):
        i = s.subflow_id
        self.cnt[i] += 1
        if self.cnt[i] >= s.cwnd_pkts:
            self.cnt[i] = 0.0
            s.cwnd_pkts = _clamp(s.cwnd_pkts + 1, s)

    def on_loss_event(self, s, now):
        reno_on_loss(s)
        self.ssthresh[s.subflow_id] = s.cwnd_pkts
        self.cnt[s.subflow_id] = 0.0


def reno_on_loss(s: SubflowState) -> None:
    """Multiplicative decrease by half, floored at ``cwnd_min``."""
    s.cwnd_pkts = _clamp(max(s.cwnd_pkts // 2, s.cwnd_min), s)


@dataclass
class CubicState:
    w_max: float = 0.0
    k: float = 0.0
    c_cubic: float = 0.4
    beta_cubic: float = 0.7
    epoch_start: int | None = None

    def __post_init__(self):
        if self.c_cubic <= 0:
            raise ValueError("c_cubic must be > 0")
        if not 0.0 < self.beta_cubic < 1.0:
            raise ValueError("beta_cubic must lie in (0, 1)")


def cubic_k(w_max: float, c_cubic: float, beta_cubic: float) -> float:
    """Seconds until the cubic returns to ``w_max``; ``beta_cubic`` is the
    multiplicative factor applied on loss (0.7 leaves 70% of the window)."""
    return (w_max * (1.0 - beta_cubic) / c_cubic) ** (1.0 / 3.0)


def cubic_window(t_s: float, state: CubicState, cwnd_min: float = 0.0, cwnd_max: float = math.inf) -> float:
    k = cubic_k(state.w_max, state.c_cubic, state.beta_cubic)
    w = state.c_cubic * (t_s - k) ** 3 + state.w_max
    return min(max(w, cwnd_min), cwnd_max)


class Cubic(_LossBased):
    def __init__(self, c_cubic: float = 0.4, beta_cubic: float = 0.7, fast_convergence: bool = True):
        self.c = c_cubic
        self.beta = beta_cubic
        self.fast_convergence = fast_convergence

    def attach(self, conn):
        super().attach(conn)
        n = len(conn.subflows)
        self.state = [CubicState(c_cubic=self.c, beta_cubic=self.beta) for _ in range(n)]
        self.w_last_max = [0.0] * n
        self.w_est = [0.0] * n
        self.origin = [0.0] * n

    def avoid(self, s, now):
        i = s.subflow_id
        st = self.state[i]
        cwnd = s.cwnd_pkts
        if st.epoch_start is None:
            st.epoch_start = now
            if cwnd < st.w_max:
                st.k = ((st.w_max - cwnd) / self.c) ** (1.0 / 3.0)
                self.origin[i] = st.w_max
            else:
                st.k = 0.0
                self.origin[i] = cwnd
            self.w_est[i] = cwnd
        t = (now - st.epoch_start + s.srtt_us) / US_PER_S
        target = self.origin[i] + self.c * (t - st.k) ** 3
        if target > cwnd:
            cnt = cwnd / (target - cwnd)
        else:
            cnt = 100.0 * cwnd
        # TCP-friendly region: never grow slower than an equivalent Reno flow.
        self.w_est[i] += 3 * (1 - self.beta) / (1 + self.beta) / cwnd
        if self.w_est[i] > cwnd:
            cnt = min(cnt, cwnd / (self.w_est[i] - cwnd))
        self.cnt[i] += 1
        if self.cnt[i] >= cnt:
            self.cnt[i] = 0.0
            s.cwnd_pkts = _clamp(cwnd + 1, s)

    def on_loss_event(self, s, now):
        i = s.subflow_id
        st = self.state[i]
        cwnd = s.cwnd_pkts
        if self.fast_convergence and cwnd < self.w_last_max[i]:
            self.w_last_max[i] = cwnd
            st.w_max = cwnd * (1 + self.beta) / 2
        else:
            self.w_last_max[i] = cwnd
            st.w_max = cwnd
        st.epoch_start = None
        s.cwnd_pkts = _clamp(cwnd * self.beta, s)
        self.ssthresh[i] = s.cwnd_pkts
        self.cnt[i] = 0.0

    def on_rto(self, s, now):
        super().on_rto(s, now)
        self.state[s.subflow_id].epoch_start = None


def lia_alpha(cwnds, rtts) -> float:
    total = sum(cwnds)
    best = max(w / (r * r) for w, r in zip(cwnds, rtts))
    denom = sum(w / r for w, r in zip(cwnds, rtts)) ** 2
    return total * best / denom


def lia_increase(cwnds, rtts, i: int) -> float:
    """Coupled per-ACK increase (packets) for subflow ``i``."""
    total = sum(cwnds)
    return min(lia_alpha(cwnds, rtts) / total, 1.0 / cwnds[i])


class Lia(_LossBased):
    def attach(self, conn):
        super().attach(conn)
        self.acc = [0.0] * len(conn.subflows)

    def avoid(self, s, now):
        subs = self.conn.subflows
        active = [x for x in subs if x.srtt_us > 0]
        if len(active) < 2:
            inc = 1.0 / s.cwnd_pkts
        else:
            cw = [float(x.cwnd_pkts) for x in active]
            rt = [x.srtt_us for x in active]
            inc = lia_increase(cw, rt, active.index(s))
        i = s.subflow_id
        self.acc[i] += inc
        if self.acc[i] >= 1.0:
            self.acc[i] -= 1.0
            s.cwnd_pkts = _clamp(s.cwnd_pkts + 1, s)

    def on_loss_event(self, s, now):
        reno_on_loss(s)
        self.ssthresh[s.subflow_id] = s.cwnd_pkts
        self.acc[s.subflow_id] = 0.0


BASELINES = {"reno": Reno, "cubic": Cubic, "lia": Lia}


def make_baseline(name: str) -> Controller:
    try:
        return BASELINES[name]()
    except KeyError:
        raise ValueError(f"unknown baseline {name!r}; expected one of {sorted(BASELINES)}") from None
