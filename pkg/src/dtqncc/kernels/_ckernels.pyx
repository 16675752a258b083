# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scheduler and attention kernels (see ``_pykernels`` for semantics)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


def pick_min_rtt(cwnd, queued, inflight, recovery, srtt):
    cdef Py_ssize_t i, m = len(cwnd)
    cdef long best = -1
    cdef double best_rtt = 0.0, r
    for i in range(m):
        if recovery[i] or cwnd[i] <= queued[i] + inflight[i]:
            continue
        r = srtt[i]
        if best < 0 or r < best_rtt:
            best = i
            best_rtt = r
    return best


def pick_min_rtt_batch(cwnd, queued, inflight, recovery, srtt):
    cdef long[:, ::1] c = np.ascontiguousarray(cwnd, dtype=np.int64)
    cdef long[:, ::1] q = np.ascontiguousarray(queued, dtype=np.int64)
    cdef long[:, ::1] f = np.ascontiguousarray(inflight, dtype=np.int64)
    cdef cnp.uint8_t[:, ::1] rec = np.ascontiguousarray(recovery, dtype=np.uint8)
    cdef double[:, ::1] s = np.ascontiguousarray(srtt, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], m = c.shape[1], r, i
    out_arr = np.empty(n, dtype=np.int64)
    cdef long[::1] out = out_arr
    cdef long best
    cdef double best_rtt
    for r in range(n):
        best = -1
        best_rtt = 0.0
        for i in range(m):
            if rec[r, i] or c[r, i] <= q[r, i] + f[r, i]:
                continue
            if best < 0 or s[r, i] < best_rtt:
                best = i
                best_rtt = s[r, i]
        out[r] = best
    return out_arr


def attention_forward(q, k, v, allowed, double scale):
    cdef double[:, :, ::1] Q = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:, :, ::1] K = np.ascontiguousarray(k, dtype=np.float64)
    cdef double[:, :, ::1] V = np.ascontiguousarray(v, dtype=np.float64)
    cdef cnp.uint8_t[:, :, ::1] A = np.ascontiguousarray(
        np.broadcast_to(allowed, (Q.shape[0], Q.shape[1], K.shape[1])), dtype=np.uint8)
    cdef Py_ssize_t n = Q.shape[0], L = Q.shape[1], S = K.shape[1], dh = Q.shape[2]
    out_arr = np.zeros((n, L, dh), dtype=np.float64)
    probs_arr = np.zeros((n, L, S), dtype=np.float64)
    cdef double[:, :, ::1] O = out_arr
    cdef double[:, :, ::1] P = probs_arr
    cdef Py_ssize_t b, t, j, d
    cdef double acc, mx, tot, w
    with nogil:
        for b in range(n):
            for t in range(L):
                mx = -INFINITY
                for j in range(S):
                    if A[b, t, j]:
                        acc = 0.0
                        for d in range(dh):
                            acc = acc + Q[b, t, d] * K[b, j, d]
                        acc = acc * scale
                        P[b, t, j] = acc
                        if acc > mx:
                            mx = acc
                if mx == -INFINITY:
                    continue
                tot = 0.0
                for j in range(S):
                    if A[b, t, j]:
                        w = exp(P[b, t, j] - mx)
                        P[b, t, j] = w
                        tot = tot + w
                for j in range(S):
                    if A[b, t, j]:
                        w = P[b, t, j] / tot
                        P[b, t, j] = w
                        for d in range(dh):
                            O[b, t, d] = O[b, t, d] + w * V[b, j, d]
    return out_arr, probs_arr


def attention_backward(dout, q, k, v, probs, double scale):
    cdef double[:, :, ::1] G = np.ascontiguousarray(dout, dtype=np.float64)
    cdef double[:, :, ::1] Q = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:, :, ::1] K = np.ascontiguousarray(k, dtype=np.float64)
    cdef double[:, :, ::1] V = np.ascontiguousarray(v, dtype=np.float64)
    cdef double[:, :, ::1] P = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t n = Q.shape[0], L = Q.shape[1], S = K.shape[1], dh = Q.shape[2]
    dq_arr = np.zeros((n, L, dh), dtype=np.float64)
    dk_arr = np.zeros((n, S, dh), dtype=np.float64)
    dv_arr = np.zeros((n, S, dh), dtype=np.float64)
    dp_arr = np.zeros(S, dtype=np.float64)
    cdef double[:, :, ::1] DQ = dq_arr
    cdef double[:, :, ::1] DK = dk_arr
    cdef double[:, :, ::1] DV = dv_arr
    cdef double[::1] dp = dp_arr
    cdef Py_ssize_t b, t, j, d
    cdef double acc, dot, p, ds
    with nogil:
        for b in range(n):
            for t in range(L):
                dot = 0.0
                for j in range(S):
                    p = P[b, t, j]
                    if p == 0.0:
                        dp[j] = 0.0
                        continue
                    acc = 0.0
                    for d in range(dh):
                        acc = acc + G[b, t, d] * V[b, j, d]
                        DV[b, j, d] = DV[b, j, d] + p * G[b, t, d]
                    dp[j] = acc
                    dot = dot + acc * p
                for j in range(S):
                    p = P[b, t, j]
                    if p == 0.0:
                        continue
                    ds = p * (dp[j] - dot) * scale
                    for d in range(dh):
                        DQ[b, t, d] = DQ[b, t, d] + ds * K[b, j, d]
                        DK[b, j, d] = DK[b, j, d] + ds * Q[b, t, d]
    return dq_arr, dk_arr, dv_arr
