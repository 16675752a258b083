"""Versioned binary container for Q-network parameters.

Layout (all integers little-endian)::

    magic      8 bytes  b"DTQNCKPT"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON (config, dims)
    n_tensors  u32
    per tensor: name_len u16, name (UTF-8), ndim u8, ndim x u32 dims
    payload    float32 values of every tensor in table order, C order
    crc32      u32 over everything above
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .dqn import DQNAgent, TrainConfig, build_network
from .network import QNet

MAGIC = b"DTQNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(meta_bytes))
    out += meta_bytes
    out += struct.pack("<I", len(params))
    for name, arr in params.items():
        nb = name.encode("utf-8")
        out += struct.pack("<HB", len(nb), arr.ndim) + nb
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    for arr in params.values():
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(data) < len(MAGIC) + 16 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("checksum mismatch")
    off = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", data, off)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off += 8
    meta = json.loads(data[off: off + meta_len].decode("utf-8"))
    off += meta_len
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    table = []
    for _ in range(n):
        name_len, ndim = struct.unpack_from("<HB", data, off)
        off += 3
        name = data[off: off + name_len].decode("utf-8")
        off += name_len
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        table.append((name, shape))
    params = {}
    for name, shape in table:
        count = int(np.prod(shape)) if shape else 1
        end = off + 4 * count
        if end > len(data) - 4:
            raise CheckpointError(f"payload truncated in tensor {name!r}")
        params[name] = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float64)
        off = end
    if off != len(data) - 4:
        raise CheckpointError("trailing bytes after payload")
    return params, meta


def save(path, net: QNet, cfg: TrainConfig) -> None:
    meta = {"train_config": cfg.to_dict(), "in_dim": net.in_dim, "n_actions": net.n_actions}
    Path(path).write_bytes(dumps(net.params, meta))


def load_network(path) -> tuple[QNet, TrainConfig]:
    params, meta = loads(Path(path).read_bytes())
    cfg = TrainConfig(**meta["train_config"])
    net = build_network(cfg, meta["in_dim"], meta["n_actions"], 0)
    net.load_params(params)
    return net, cfg


def load_agent(path, seed: int = 0) -> DQNAgent:
    """Agent whose online and target networks both hold the saved parameters."""
    net, cfg = load_network(path)
    agent = DQNAgent(cfg, net.in_dim, net.n_actions, seed)
    agent.online.load_params(net.params)
    agent.sync_target()
    return agent
