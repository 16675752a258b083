"""Shared oracles for the agent tests."""

import numpy as np


def numeric_grads(net, x, valid, weights, h=1e-3):
    """Central differences of ``sum(weights * Q)`` for every parameter entry."""
    out = {}
    for name, p in net.params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float((net.q_values(x, valid) * weights).sum())
            flat[i] = old - h
            down = float((net.q_values(x, valid) * weights).sum())
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def analytic_grads(net, x, valid, weights):
    q, cache = net.forward(x, valid)
    return net.backward(weights * np.ones_like(q), cache)


def tensor_errors(analytic, numeric):
    """Relative L2 error per tensor: ||a - n|| / ||n||, or ||a|| when n is zero."""
    errs = {}
    for name, n in numeric.items():
        a = analytic[name]
        denom = np.linalg.norm(n)
        diff = np.linalg.norm(a - n)
        errs[name] = diff / denom if denom > 0 else diff
    return errs
