"""Time the compiled kernels against the pure-Python fallback.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``
"""

import argparse
import timeit

import numpy as np

from dtqncc import kernels


def cases(rng):
    m = 4
    state = ([int(x) for x in rng.integers(4, 20, m)], [int(x) for x in rng.integers(0, 5, m)],
             [int(x) for x in rng.integers(0, 20, m)], [bool(x) for x in rng.random(m) < 0.2],
             [float(x) for x in rng.integers(5000, 20_000, m)])
    n = 10_000
    batch = (rng.integers(4, 20, (n, m)), rng.integers(0, 5, (n, m)), rng.integers(0, 20, (n, m)),
             rng.random((n, m)) < 0.2, rng.integers(5000, 20_000, (n, m)).astype(float))
    length, dh, heads = 8, 16, 32 * 4
    q, k, v = (rng.normal(size=(heads, length, dh)) for _ in range(3))
    allowed = np.tril(np.ones((length, length), bool))[None].repeat(heads, axis=0)
    out, probs = kernels.python.attention_forward(q, k, v, allowed, dh ** -0.5)
    dout = rng.normal(size=out.shape)
    return {
        "pick_min_rtt (4 subflows)": lambda impl: impl.pick_min_rtt(*state),
        "pick_min_rtt_batch (10k x 4)": lambda impl: impl.pick_min_rtt_batch(*batch),
        "attention_forward (128 x 8 x 16)": lambda impl: impl.attention_forward(q, k, v, allowed, dh ** -0.5),
        "attention_backward (128 x 8 x 16)": lambda impl: impl.attention_backward(dout, q, k, v, probs, dh ** -0.5),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled is None:
        print("compiled kernels unavailable; only the Python backend can be timed")
    impls = {"python": kernels.python}
    if kernels.compiled is not None:
        impls["cython"] = kernels.compiled
    print(f"{'kernel':36s}" + "".join(f"{name:>14s}" for name in impls) + ("     speedup" if len(impls) > 1 else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for name, impl in impls.items():
            timer = timeit.Timer(lambda: fn(impl))
            number, _ = timer.autorange()
            times[name] = min(timer.repeat(args.repeat, number)) / number
        row = f"{label:36s}" + "".join(f"{t * 1e6:12.1f}us" for t in times.values())
        if "cython" in times:
            row += f"{times['python'] / times['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
