"""Q-networks in numpy float64 with hand-written reverse mode.

:class:`TransformerQNet` is a pre-norm causal Transformer that emits one row
of Q-values per context timestep. :class:`MLPQNet` applies a two-hidden-layer
feed-forward network to each timestep independently and serves as the
single-step ablation. Both expose ``forward`` / ``backward`` over a shared
``params`` dict so the training code treats them identically.
"""

from __future__ import annotations

import math

import numpy as np

from .. import kernels

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    u = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def gelu_grad(x, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def layer_norm_backward(dy, g, cache):
    xhat, rstd = cache
    n = xhat.shape[-1]
    dxhat = dy * g
    dg = (dy * xhat).reshape(-1, n).sum(axis=0)
    db = dy.reshape(-1, n).sum(axis=0)
    dx = rstd / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dg, db


def _linear_init(rng, fan_in, fan_out):
    return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))


def _matmul_grad(x, dy):
    """Weight gradient of ``y = x @ w`` for x of shape (..., i) and dy of shape (..., o)."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


class QNet:
    """Shared plumbing: parameter storage, copying and input validation."""

    params: dict[str, np.ndarray]
    in_dim: int
    n_actions: int
    max_len: int

    def check_input(self, x, valid):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3:
            raise ValueError(f"context must be (batch, length, features), got shape {x.shape}")
        b, length, d = x.shape
        if d != self.in_dim:
            raise ValueError(f"context has {d} features per step, network expects {self.in_dim}")
        if length < 1 or length > self.max_len:
            raise ValueError(f"context length {length} outside [1, {self.max_len}]")
        if valid is None:
            valid = np.ones((b, length), dtype=bool)
        else:
            valid = np.asarray(valid, dtype=bool)
            if valid.ndim == 1:
                valid = valid[None]
            if valid.shape != (b, length):
                raise ValueError(f"pad mask shape {valid.shape} does not match context (batch={b}, length={length})")
        return x, valid

    def q_values(self, x, valid=None) -> np.ndarray:
        """Q-values of shape (batch, length, n_actions); a 2-D context gives (length, n_actions)."""
        squeeze = np.asarray(x).ndim == 2
        q, _ = self.forward(x, valid)
        return q[0] if squeeze else q

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        if params.keys() != self.params.keys():
            raise ValueError("parameter names differ")
        for k, v in params.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k][...] = v

    def clone(self) -> "QNet":
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.params = self.copy_params()
        return other

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


class TransformerQNet(QNet):
    def __init__(self, in_dim: int, n_actions: int, max_len: int = 8, d_model: int = 64,
                 n_blocks: int = 2, n_heads: int = 4, d_ff: int = 128, seed: int | np.random.Generator = 0):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.in_dim, self.n_actions, self.max_len = in_dim, n_actions, max_len
        self.d_model, self.n_blocks, self.n_heads, self.d_ff = d_model, n_blocks, n_heads, d_ff
        p: dict[str, np.ndarray] = {}
        p["embed.w"] = _linear_init(rng, in_dim, d_model)
        p["embed.b"] = np.zeros(d_model)
        p["pos"] = rng.normal(0.0, 0.02, size=(max_len, d_model))
        for i in range(n_blocks):
            pre = f"block{i}."
            p[pre + "ln1.g"] = np.ones(d_model)
            p[pre + "ln1.b"] = np.zeros(d_model)
            for name in ("wq", "wk", "wv", "wo"):
                p[pre + name] = _linear_init(rng, d_model, d_model)
            p[pre + "bo"] = np.zeros(d_model)
            p[pre + "ln2.g"] = np.ones(d_model)
            p[pre + "ln2.b"] = np.zeros(d_model)
            p[pre + "ff1.w"] = _linear_init(rng, d_model, d_ff)
            p[pre + "ff1.b"] = np.zeros(d_ff)
            p[pre + "ff2.w"] = _linear_init(rng, d_ff, d_model)
            p[pre + "ff2.b"] = np.zeros(d_model)
        p["lnf.g"] = np.ones(d_model)
        p["lnf.b"] = np.zeros(d_model)
        p["head.w"] = _linear_init(rng, d_model, n_actions) * 0.1
        p["head.b"] = np.zeros(n_actions)
        self.params = p

    def _split(self, x):
        b, length, _ = x.shape
        h, dh = self.n_heads, self.d_model // self.n_heads
        return np.ascontiguousarray(x.reshape(b, length, h, dh).transpose(0, 2, 1, 3).reshape(b * h, length, dh))

    def _merge(self, x, b, length):
        h, dh = self.n_heads, self.d_model // self.n_heads
        return x.reshape(b, h, length, dh).transpose(0, 2, 1, 3).reshape(b, length, h * dh)

    def forward(self, x, valid=None):
        x, valid = self.check_input(x, valid)
        p = self.params
        b, length, _ = x.shape
        causal = np.tril(np.ones((length, length), dtype=bool))
        allowed = causal[None] & valid[:, None, :] & valid[:, :, None]
        allowed_h = np.repeat(allowed, self.n_heads, axis=0)
        scale = 1.0 / math.sqrt(self.d_model // self.n_heads)
        h = x @ p["embed.w"] + p["embed.b"] + p["pos"][:length]
        caches = []
        for i in range(self.n_blocks):
            pre = f"block{i}."
            a, ln1 = layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = self._split(a @ p[pre + "wq"])
            k = self._split(a @ p[pre + "wk"])
            v = self._split(a @ p[pre + "wv"])
            att, probs = kernels.attention_forward(q, k, v, allowed_h, scale)
            att = self._merge(att, b, length)
            h = h + att @ p[pre + "wo"] + p[pre + "bo"]
            c, ln2 = layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
            pre_act = c @ p[pre + "ff1.w"] + p[pre + "ff1.b"]
            f, t = gelu(pre_act)
            h = h + f @ p[pre + "ff2.w"] + p[pre + "ff2.b"]
            caches.append((a, ln1, q, k, v, probs, att, c, ln2, pre_act, t, f))
        z, lnf = layer_norm(h, p["lnf.g"], p["lnf.b"])
        out = z @ p["head.w"] + p["head.b"]
        return out, (x, b, length, scale, caches, z, lnf, probs_list(caches))

    def backward(self, dout, cache) -> dict[str, np.ndarray]:
        x, b, length, scale, caches, z, lnf, _ = cache
        p = self.params
        g = self.zeros_like()
        g["head.w"] = _matmul_grad(z, dout)
        g["head.b"] = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
        dz = dout @ p["head.w"].T
        dh, g["lnf.g"], g["lnf.b"] = layer_norm_backward(dz, p["lnf.g"], lnf)
        for i in reversed(range(self.n_blocks)):
            pre = f"block{i}."
            a, ln1, q, k, v, probs, att, c, ln2, pre_act, t, f = caches[i]
            g[pre + "ff2.w"] = _matmul_grad(f, dh)
            g[pre + "ff2.b"] = dh.reshape(-1, dh.shape[-1]).sum(axis=0)
            dpre = (dh @ p[pre + "ff2.w"].T) * gelu_grad(pre_act, t)
            g[pre + "ff1.w"] = _matmul_grad(c, dpre)
            g[pre + "ff1.b"] = dpre.reshape(-1, dpre.shape[-1]).sum(axis=0)
            dc = dpre @ p[pre + "ff1.w"].T
            dx, g[pre + "ln2.g"], g[pre + "ln2.b"] = layer_norm_backward(dc, p[pre + "ln2.g"], ln2)
            dh = dh + dx
            g[pre + "wo"] = _matmul_grad(att, dh)
            g[pre + "bo"] = dh.reshape(-1, dh.shape[-1]).sum(axis=0)
            datt = self._split(dh @ p[pre + "wo"].T)
            dq, dk, dv = kernels.attention_backward(datt, q, k, v, probs, scale)
            dq, dk, dv = (self._merge(d, b, length) for d in (dq, dk, dv))
            g[pre + "wq"] = _matmul_grad(a, dq)
            g[pre + "wk"] = _matmul_grad(a, dk)
            g[pre + "wv"] = _matmul_grad(a, dv)
            da = dq @ p[pre + "wq"].T + dk @ p[pre + "wk"].T + dv @ p[pre + "wv"].T
            dx, g[pre + "ln1.g"], g[pre + "ln1.b"] = layer_norm_backward(da, p[pre + "ln1.g"], ln1)
            dh = dh + dx
        g["pos"][:length] = dh.sum(axis=0)
        g["embed.w"] = _matmul_grad(x, dh)
        g["embed.b"] = dh.reshape(-1, dh.shape[-1]).sum(axis=0)
        return g

    @staticmethod
    def attention_probs(cache) -> list[np.ndarray]:
        """Per-block attention weights of shape (batch * heads, length, length)."""
        return cache[-1]


def probs_list(caches):
    return [c[5] for c in caches]


class MLPQNet(QNet):
    """Two hidden GELU layers applied to each timestep on its own."""

    def __init__(self, in_dim: int, n_actions: int, max_len: int = 1, hidden: int = 246,
                 seed: int | np.random.Generator = 0):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.in_dim, self.n_actions, self.max_len, self.hidden = in_dim, n_actions, max_len, hidden
        self.params = {
            "fc1.w": _linear_init(rng, in_dim, hidden),
            "fc1.b": np.zeros(hidden),
            "fc2.w": _linear_init(rng, hidden, hidden),
            "fc2.b": np.zeros(hidden),
            "head.w": _linear_init(rng, hidden, n_actions) * 0.1,
            "head.b": np.zeros(n_actions),
        }

    def forward(self, x, valid=None):
        x, valid = self.check_input(x, valid)
        p = self.params
        z1 = x @ p["fc1.w"] + p["fc1.b"]
        h1, t1 = gelu(z1)
        z2 = h1 @ p["fc2.w"] + p["fc2.b"]
        h2, t2 = gelu(z2)
        out = h2 @ p["head.w"] + p["head.b"]
        return out, (x, z1, t1, h1, z2, t2, h2)

    def backward(self, dout, cache) -> dict[str, np.ndarray]:
        x, z1, t1, h1, z2, t2, h2 = cache
        p = self.params
        g = {}
        g["head.w"] = _matmul_grad(h2, dout)
        g["head.b"] = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
        dz2 = (dout @ p["head.w"].T) * gelu_grad(z2, t2)
        g["fc2.w"] = _matmul_grad(h1, dz2)
        g["fc2.b"] = dz2.reshape(-1, dz2.shape[-1]).sum(axis=0)
        dz1 = (dz2 @ p["fc2.w"].T) * gelu_grad(z1, t1)
        g["fc1.w"] = _matmul_grad(x, dz1)
        g["fc1.b"] = dz1.reshape(-1, dz1.shape[-1]).sum(axis=0)
        return g


def transformer_param_count(in_dim, n_actions, max_len, d_model, n_blocks, d_ff) -> int:
    per_block = 4 * d_model + 4 * d_model * d_model + d_model + 2 * d_model * d_ff + d_ff + d_model
    return (in_dim * d_model + d_model + max_len * d_model + n_blocks * per_block
            + 2 * d_model + d_model * n_actions + n_actions)


def matched_hidden(budget: int, in_dim: int, n_actions: int) -> int:
    """Hidden width whose MLP parameter count is closest to ``budget``."""
    # h^2 + (in + out + 2) h + out = budget
    bcoef = in_dim + n_actions + 2
    h = (-bcoef + math.sqrt(bcoef * bcoef + 4 * (budget - n_actions))) / 2
    return max(1, int(round(h)))
