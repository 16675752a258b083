"""Reference implementations of the hot kernels.

These are always importable and define the semantics the compiled
versions in ``_ckernels.pyx`` must reproduce exactly.
"""

import numpy as np


def pick_min_rtt(cwnd, queued, inflight, recovery, srtt):
    """Index of the available subflow with the smallest srtt, or -1.

    A subflow is available iff ``cwnd > queued + inflight`` and it is not in
    recovery. Ties resolve to the lowest index.
    """
    best = -1
    best_rtt = 0.0
    for i in range(len(cwnd)):
        if recovery[i] or cwnd[i] <= queued[i] + inflight[i]:
            continue
        if best < 0 or srtt[i] < best_rtt:
            best = i
            best_rtt = srtt[i]
    return best


def pick_min_rtt_batch(cwnd, queued, inflight, recovery, srtt):
    """Vectorised :func:`pick_min_rtt` over rows of ``(n, m)`` arrays."""
    cwnd = np.asarray(cwnd)
    avail = (cwnd > np.asarray(queued) + np.asarray(inflight)) & ~np.asarray(recovery, dtype=bool)
    rtt = np.where(avail, np.asarray(srtt, dtype=np.float64), np.inf)
    out = np.argmin(rtt, axis=1).astype(np.int64)
    out[~avail.any(axis=1)] = -1
    return out


def attention_forward(q, k, v, allowed, scale):
    """Masked scaled dot-product attention.

    q, k, v: ``(n, L, dh)`` float64; allowed: ``(n, L, L)`` bool where
    ``allowed[b, t, j]`` permits query ``t`` to see key ``j``. Rows with no
    allowed key produce all-zero probabilities and outputs.
    Returns ``(out, probs)``.
    """
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    scores = np.where(allowed, scores, -np.inf)
    row_max = scores.max(axis=-1, keepdims=True)
    any_allowed = np.isfinite(row_max)
    row_max = np.where(any_allowed, row_max, 0.0)
    e = np.where(allowed, np.exp(scores - row_max), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    probs = e / np.where(denom > 0, denom, 1.0)
    out = np.matmul(probs, v)
    return out, probs


def attention_backward(dout, q, k, v, probs, scale):
    """Gradients of :func:`attention_forward` w.r.t. q, k and v."""
    dv = np.matmul(np.swapaxes(probs, -1, -2), dout)
    dprobs = np.matmul(dout, np.swapaxes(v, -1, -2))
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores *= scale
    dq = np.matmul(dscores, k)
    dk = np.matmul(np.swapaxes(dscores, -1, -2), q)
    return dq, dk, dv
