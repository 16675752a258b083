"""Scalar metrics over runs."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def jfi(throughputs: Sequence[float]) -> float:
    """Jain's fairness index ``(sum x)^2 / (n * sum x^2)``."""
    x = [float(v) for v in throughputs]
    if not x:
        raise ValueError("jfi needs at least one value")
    if any(v < 0 or math.isnan(v) for v in x):
        raise ValueError("throughputs must be non-negative numbers")
    sq = sum(v * v for v in x)
    if sq == 0:
        raise ValueError("jfi is undefined when every throughput is zero")
    return sum(x) ** 2 / (len(x) * sq)


def rtt_stats(samples: Sequence[float]) -> dict[str, float]:
    """Mean, population std and coefficient of variation; NaN when empty."""
    if len(samples) == 0:
        return {"mean_us": float("nan"), "std_us": float("nan"), "cv": float("nan")}
    a = np.asarray(samples, dtype=np.float64)
    mean = float(a.mean())
    std = float(a.std())
    return {"mean_us": mean, "std_us": std, "cv": std / mean if mean > 0 else float("nan")}


def fct_stats(fcts_us: Sequence[int]) -> dict[str, float]:
    if len(fcts_us) == 0:
        return {"count": 0, "mean_us": float("nan"), "median_us": float("nan"),
                "p95_us": float("nan"), "min_us": float("nan"), "max_us": float("nan")}
    a = np.asarray(fcts_us, dtype=np.float64)
    return {
        "count": int(a.size),
        "mean_us": float(a.mean()),
        "median_us": float(np.median(a)),
        "p95_us": float(np.percentile(a, 95)),
        "min_us": float(a.min()),
        "max_us": float(a.max()),
    }


def integrated_capacity_bits(spec, duration_us: int) -> float:
    """Bits a link can serialise in ``[0, duration_us]`` under its rate trace."""
    if duration_us <= 0:
        return 0.0
    points = [(0, spec.rate_bps)] + [(t, r) for t, r, _ in spec.trace if t > 0]
    if spec.trace and spec.trace[0][0] <= 0:
        points[0] = (0, [r for t, r, _ in spec.trace if t <= 0][-1])
    total = 0.0
    for (t0, r), nxt in zip(points, points[1:] + [(duration_us, 0)]):
        t1 = min(nxt[0], duration_us)
        if t1 > t0:
            total += r * (t1 - t0) / 1e6
        if nxt[0] >= duration_us:
            break
    return total
