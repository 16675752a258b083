import json
import socket

import pytest
from hypothesis import given, strategies as st

from dtqncc import wire


def obs2():
    raw = [{"mean_rtt_us": 21000.5, "min_rtt_us": 20000, "base_rtt_us": 20000, "throughput_bps": 9.5e6,
            "bw_ceiling_bps": 1e7, "ack_count": 8, "cwnd": 17, "target": 18, "cwnd_min": 4,
            "cwnd_max": 67, "expflag": 0}] * 2
    return wire.Observation(step=3, at_us=30_000, features=[[0.1] * 6, [0.2] * 6], raw=raw, done=False)


def test_observation_round_trip():
    m = obs2()
    assert wire.decode(wire.encode(m)) == m


@pytest.mark.parametrize("msg", [wire.Hello(1, 2, 6, "single"), wire.Directive(4, [10, 12], 7), wire.Bye("x")])
def test_round_trip_each_type(msg):
    assert wire.decode(wire.encode(msg)) == msg


def test_length_prefix_counts_body_bytes():
    frame = wire.encode(obs2())
    assert int.from_bytes(frame[:4], "big") == len(frame) - 4


def test_minimal_bye():
    frame = wire.encode(wire.Bye())
    body = json.loads(frame[4:])
    assert body == {"type": "Bye", "reason": ""}
    assert len(frame) == 4 + len(b'{"reason":"","type":"Bye"}')


def test_truncated_frame_rejected():
    frame = wire.encode(obs2())
    with pytest.raises(wire.FrameError, match="truncated"):
        wire.decode(frame[:-5])
    with pytest.raises(wire.FrameError, match="truncated length"):
        wire.decode(frame[:2])


def test_malformed_body_names_offset():
    body = b'{"type": "Bye", oops}'
    with pytest.raises(wire.FrameError) as exc:
        wire.decode(len(body).to_bytes(4, "big") + body)
    assert exc.value.offset == 4 + body.index(b"oops")
    assert "offset" in str(exc.value)


def test_oversize_rejected_both_ways():
    with pytest.raises(wire.FrameError, match="exceeds"):
        wire.encode(wire.Bye("x" * (wire.MAX_FRAME + 1)))
    with pytest.raises(wire.FrameError, match="exceeds"):
        wire.decode((wire.MAX_FRAME + 1).to_bytes(4, "big") + b"{}")


def test_unknown_fields_ignored_and_unknown_type_rejected():
    body = json.dumps({"type": "Directive", "step": 1, "targets": [5], "action": 2, "extra": 9}).encode()
    assert wire.decode(len(body).to_bytes(4, "big") + body) == wire.Directive(1, [5], 2)
    body = json.dumps({"type": "Nope"}).encode()
    with pytest.raises(wire.FrameError, match="unknown message type"):
        wire.decode(len(body).to_bytes(4, "big") + body)


def test_stream_reader_handles_split_frames():
    msgs = [wire.Hello(), obs2(), wire.Bye("done")]
    data = b"".join(wire.encode(m) for m in msgs)
    reader = wire.FrameReader()
    got = []
    for i in range(0, len(data), 7):
        got.extend(reader.feed(data[i:i + 7]))
    assert got == msgs and reader.pending == 0


def test_socket_send_and_receive():
    a, b = socket.socketpair()
    with a, b:
        wire.send_message(a, obs2())
        assert wire.recv_message(b) == obs2()
        a.shutdown(socket.SHUT_WR)
        assert wire.recv_message(b) is None


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(step=st.integers(0, 2**40), targets=st.lists(st.integers(-10**6, 10**6), max_size=8),
       feats=st.lists(st.lists(finite, min_size=6, max_size=6), max_size=4))
def test_codec_identity_property(step, targets, feats):
    for m in (wire.Directive(step, targets, step % 25), wire.Observation(step, step, feats, [], bool(step % 2))):
        assert wire.decode(wire.encode(m)) == m
