"""Framed JSON messages between the proxy and the decision engine.

A frame is a 4-byte big-endian body length followed by a UTF-8 JSON object
whose ``"type"`` is one of ``Hello``, ``Observation``, ``Directive`` or
``Bye``. Field schemas:

``Hello``
    ``conn_id`` (int), ``n_subflows`` (int), ``features_per_subflow`` (int),
    ``mode`` ("sequence" | "single").
``Observation``
    ``step`` (int), ``at_us`` (int), ``features`` (list of M lists of floats),
    ``raw`` (list of M objects: ``mean_rtt_us``, ``min_rtt_us``,
    ``base_rtt_us``, ``throughput_bps``, ``bw_ceiling_bps``, ``ack_count``,
    ``cwnd``, ``target``, ``cwnd_min``, ``cwnd_max``, ``expflag``), ``done`` (bool).
``Directive``
    ``step`` (int), ``targets`` (list of M ints), ``action`` (int).
``Bye``
    ``reason`` (str).

Unknown fields are dropped on decode; missing fields take the defaults.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields

MAX_FRAME = 1 << 20
_HEADER = struct.Struct(">I")


class FrameError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Hello:
    conn_id: int = 0
    n_subflows: int = 2
    features_per_subflow: int = 6
    mode: str = "sequence"


@dataclass
class Observation:
    step: int = 0
    at_us: int = 0
    features: list = field(default_factory=list)
    raw: list = field(default_factory=list)
    done: bool = False


@dataclass
class Directive:
    step: int = 0
    targets: list = field(default_factory=list)
    action: int = -1


@dataclass
class Bye:
    reason: str = ""


MESSAGE_TYPES = {cls.__name__: cls for cls in (Hello, Observation, Directive, Bye)}


def to_body(msg) -> dict:
    body = {"type": type(msg).__name__}
    body.update(asdict(msg))
    return body


def from_body(body: dict, offset: int = 0):
    if not isinstance(body, dict):
        raise FrameError("frame body is not a JSON object", offset)
    kind = body.get("type")
    cls = MESSAGE_TYPES.get(kind)
    if cls is None:
        raise FrameError(f"unknown message type {kind!r}", offset)
    known = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in body.items() if k in known})


def encode(msg) -> bytes:
    data = json.dumps(to_body(msg), separators=(",", ":"), sort_keys=True).encode("utf-8")
    if len(data) > MAX_FRAME:
        raise FrameError(f"frame body of {len(data)} bytes exceeds {MAX_FRAME}", 0)
    return _HEADER.pack(len(data)) + data


def _decode_body(data: bytes, offset: int):
    try:
        body = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        pos = getattr(exc, "pos", None) or getattr(exc, "start", 0)
        raise FrameError(f"malformed frame body: {exc}", offset + _HEADER.size + pos) from None
    return from_body(body, offset)


def decode(frame: bytes):
    """Decode exactly one frame; trailing or missing bytes are errors."""
    if len(frame) < _HEADER.size:
        raise FrameError("truncated length prefix", len(frame))
    (n,) = _HEADER.unpack_from(frame, 0)
    if n > MAX_FRAME:
        raise FrameError(f"declared length {n} exceeds {MAX_FRAME}", 0)
    end = _HEADER.size + n
    if len(frame) < end:
        raise FrameError(f"truncated body: need {n} bytes, have {len(frame) - _HEADER.size}", len(frame))
    if len(frame) > end:
        raise FrameError("trailing bytes after frame", end)
    return _decode_body(frame[_HEADER.size:end], 0)


class FrameReader:
    """Incremental decoder for a byte stream carrying back-to-back frames."""

    def __init__(self):
        self._buf = bytearray()
        self._consumed = 0

    def feed(self, data: bytes) -> list:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= _HEADER.size:
            (n,) = _HEADER.unpack_from(self._buf, 0)
            if n > MAX_FRAME:
                raise FrameError(f"declared length {n} exceeds {MAX_FRAME}", self._consumed)
            end = _HEADER.size + n
            if len(self._buf) < end:
                break
            out.append(_decode_body(bytes(self._buf[_HEADER.size:end]), self._consumed))
            del self._buf[:end]
            self._consumed += end
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def recv_message(sock):
    """Blocking read of one frame from a socket; ``None`` on clean EOF."""
    header = _recv_exact(sock, _HEADER.size, allow_eof=True)
    if header is None:
        return None
    (n,) = _HEADER.unpack(header)
    if n > MAX_FRAME:
        raise FrameError(f"declared length {n} exceeds {MAX_FRAME}", 0)
    return _decode_body(_recv_exact(sock, n), 0)


def send_message(sock, msg) -> None:
    sock.sendall(encode(msg))


def _recv_exact(sock, n: int, allow_eof: bool = False):
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            if allow_eof and got == 0:
                return None
            raise FrameError(f"connection closed after {got} of {n} bytes", got)
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)
