import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtqncc import kernels

backends = [kernels.python] + ([kernels.compiled] if kernels.compiled is not None else [])


def random_attention(rng, n=3, length=5, dh=4):
    q, k, v = (rng.normal(size=(n, length, dh)) for _ in range(3))
    allowed = np.tril(np.ones((length, length), bool))[None].repeat(n, axis=0)
    allowed[0, :2] = False
    allowed[0, :, :2] = False
    return q, k, v, allowed


def test_backend_name_matches_import():
    assert kernels.BACKEND == ("cython" if kernels.compiled is not None else "python")


@pytest.mark.parametrize("impl", backends, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_attention_matches_reference(impl):
    rng = np.random.default_rng(0)
    q, k, v, allowed = random_attention(rng)
    out, probs = impl.attention_forward(q, k, v, allowed, 0.5)
    ref_out, ref_probs = kernels.python.attention_forward(q, k, v, allowed, 0.5)
    assert np.allclose(out, ref_out, atol=1e-12) and np.allclose(probs, ref_probs, atol=1e-12)
    assert np.all(probs[0, :2] == 0.0) and np.all(out[0, :2] == 0.0)
    dout = rng.normal(size=out.shape)
    for got, want in zip(impl.attention_backward(dout, q, k, v, probs, 0.5),
                         kernels.python.attention_backward(dout, q, k, v, ref_probs, 0.5)):
        assert np.allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("impl", backends, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@given(st.lists(st.tuples(st.integers(1, 20), st.integers(0, 10), st.integers(0, 20), st.booleans(),
                          st.sampled_from([1.0, 2.0, 3.0])), min_size=1, max_size=6))
@settings(max_examples=200, deadline=None)
def test_pick_matches_reference(impl, rows):
    cols = [list(c) for c in zip(*rows)]
    want = kernels.python.pick_min_rtt(*cols)
    assert impl.pick_min_rtt(*cols) == want
    batch = [np.array([c]) for c in cols]
    assert int(impl.pick_min_rtt_batch(*batch)[0]) == want
