import math

import pytest
from hypothesis import given, strategies as st

from dtqncc.baselines import (Cubic, CubicState, Lia, Reno, cubic_k, cubic_window, lia_alpha, lia_increase,
                              make_baseline)
from dtqncc.datapath import Connection, DatapathConfig, Mode, Workload
from dtqncc.netsim import EventLoop, Link, LinkSpec, Packet, Rng, MTU


def attached(ctrl, n=1, cwnd=10):
    loop = EventLoop()
    links = [Link(LinkSpec(10_000_000, 10_000), loop, Rng(1, "l", i)) for i in range(n)]
    conn = Connection(0, loop, links, ctrl, DatapathConfig(cwnd_max=1000), Workload())
    for s in conn.subflows:
        s.cwnd_pkts = cwnd
        s.srtt_us = 20_000.0
        ctrl.ssthresh[s.subflow_id] = 1
    return conn


def ack(ctrl, s, now=0):
    ctrl.on_ack(s, Packet(0, s.subflow_id, 0, MTU, 0), 20_000, now)


def test_reno_additive_increase():
    ctrl = Reno()
    s = attached(ctrl).subflows[0]
    for _ in range(10):
        ack(ctrl, s)
    assert s.cwnd_pkts == 11


def test_reno_halves_on_loss():
    ctrl = Reno()
    s = attached(ctrl).subflows[0]
    ctrl.on_loss_event(s, 0)
    assert s.cwnd_pkts == 5


def test_reno_floor_at_cwnd_min():
    ctrl = Reno()
    s = attached(ctrl, cwnd=5).subflows[0]
    ctrl.on_loss_event(s, 0)
    assert s.cwnd_pkts == 4


def test_reno_frozen_during_recovery():
    ctrl = Reno()
    s = attached(ctrl).subflows[0]
    s.mode = Mode.RECOVERY
    for _ in range(30):
        ack(ctrl, s)
    assert s.cwnd_pkts == 10


def test_cubic_k_hand_value():
    assert abs(cubic_k(100, 0.4, 0.7) - 75 ** (1 / 3)) < 1e-12
    assert abs(cubic_k(100, 0.4, 0.7) - 4.2172) < 1e-4


def test_cubic_window_origin_and_start():
    st_ = CubicState(w_max=100)
    assert abs(cubic_window(0.0, st_) - 70.0) < 1e-9
    assert abs(cubic_window(cubic_k(100, 0.4, 0.7), st_) - 100.0) < 1e-9


def test_cubic_window_is_clamped():
    st_ = CubicState(w_max=100)
    assert cubic_window(100.0, st_, cwnd_max=500) == 500
    assert cubic_window(0.0, CubicState(w_max=5), cwnd_min=4) >= 4


def test_cubic_loss_keeps_seventy_percent():
    ctrl = Cubic()
    s = attached(ctrl, cwnd=100).subflows[0]
    ctrl.on_loss_event(s, 0)
    assert s.cwnd_pkts == 70
    assert ctrl.state[0].w_max == 100


def test_cubic_state_validation():
    with pytest.raises(ValueError):
        CubicState(c_cubic=0)
    with pytest.raises(ValueError):
        CubicState(beta_cubic=1.0)


def test_lia_single_subflow_matches_reno():
    for w, r in ((10, 0.02), (37, 0.1)):
        assert abs(lia_increase([w], [r], 0) - 1 / w) < 1e-12


def test_lia_symmetric_is_quarter_of_uncoupled_reno():
    # alpha = 1/2 for two equal subflows, so alpha / (2w) = 1/(4w): half of Reno on the total window.
    w, r = 20.0, 0.03
    assert abs(lia_alpha([w, w], [r, r]) - 0.5) < 1e-12
    inc = lia_increase([w, w], [r, r], 0)
    assert abs(inc - 1 / (4 * w)) < 1e-12
    assert abs(inc - 0.5 * (1 / (2 * w))) < 1e-12


def test_lia_capped_at_uncoupled_increase():
    cw, rt = [5.0, 1.0], [0.1, 0.01]
    assert lia_alpha(cw, rt) / sum(cw) > 1 / cw[0]
    assert lia_increase(cw, rt, 0) == 1 / cw[0]


@given(st.lists(st.tuples(st.floats(1, 1000), st.floats(1e-3, 1.0)), min_size=1, max_size=4))
def test_lia_never_exceeds_reno(paths):
    cw = [p[0] for p in paths]
    rt = [p[1] for p in paths]
    for i in range(len(paths)):
        assert lia_increase(cw, rt, i) <= 1 / cw[i] + 1e-15


def test_make_baseline():
    assert isinstance(make_baseline("lia"), Lia)
    with pytest.raises(ValueError, match="unknown baseline"):
        make_baseline("bbr")


@pytest.mark.parametrize("name", ["reno", "cubic", "lia"])
def test_baselines_respect_bounds_under_loss(name):
    loop = EventLoop()
    links = [Link(LinkSpec(10_000_000, 5000, 0.02, 30), loop, Rng(3, "l", i)) for i in range(2)]
    cfg = DatapathConfig(cwnd_max=60)
    conn = Connection(0, loop, links, make_baseline(name), cfg, Workload())

    def check(_t):
        for s in conn.subflows:
            assert s.cwnd_min <= s.cwnd_pkts <= s.cwnd_max

    loop.after_event = check
    loop.run(until=3_000_000)
    assert conn.received_bytes > 0
    assert math.isfinite(conn.subflows[0].srtt_us)
