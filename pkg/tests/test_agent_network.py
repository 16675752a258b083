import numpy as np
import pytest

from dtqncc.agent.network import (MLPQNet, TransformerQNet, gelu, gelu_grad, layer_norm, matched_hidden,
                                  transformer_param_count)
from helpers import analytic_grads, numeric_grads, tensor_errors


def small_net(seed=0, **kw):
    args = dict(in_dim=12, n_actions=5, max_len=4, d_model=8, n_blocks=2, n_heads=2, d_ff=16, seed=seed)
    args.update(kw)
    return TransformerQNet(**args)


def test_zero_weights_give_head_bias():
    net = small_net()
    for p in net.params.values():
        p[...] = 0.0
    net.params["head.b"][:] = np.arange(5.0)
    q = net.q_values(np.random.default_rng(0).normal(size=(3, 4, 12)))
    assert np.array_equal(q, np.broadcast_to(np.arange(5.0), q.shape))


def test_softmax_rows_sum_to_one_and_mask_is_exact():
    net = small_net()
    x = np.random.default_rng(1).normal(size=(2, 4, 12))
    valid = np.array([[False, True, True, True], [True, True, True, True]])
    _, cache = net.forward(x, valid)
    for probs in net.attention_probs(cache):
        probs = probs.reshape(2, 2, 4, 4)
        for b in range(2):
            for t in range(4):
                row = probs[b, :, t]
                if valid[b, t]:
                    assert np.allclose(row.sum(axis=-1), 1.0, atol=1e-6)
                    assert np.all(row[:, t + 1:] == 0.0)
                    assert np.all(row[:, ~valid[b]] == 0.0)
                else:
                    assert np.all(row == 0.0)


def test_causality_future_perturbation():
    net = small_net(seed=3)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 4, 12))
    base = net.q_values(x)
    for t in range(4):
        y = x.copy()
        y[0, t] += rng.normal(size=12)
        q = net.q_values(y)
        assert np.array_equal(q[0, :t], base[0, :t])
        assert not np.allclose(q[0, t], base[0, t])


def test_shape_errors_name_dimensions():
    net = small_net()
    with pytest.raises(ValueError, match="12"):
        net.q_values(np.zeros((1, 4, 11)))
    with pytest.raises(ValueError, match="4"):
        net.q_values(np.zeros((1, 5, 12)))


def test_gradients_match_finite_differences():
    net = small_net(seed=5)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 4, 12))
    valid = np.array([[False, True, True, True], [True, True, True, True]])
    w = rng.normal(size=(2, 4, 5)) * valid[..., None]
    errs = tensor_errors(analytic_grads(net, x, valid, w), numeric_grads(net, x, valid, w))
    assert set(errs) == set(net.params)
    bad = {k: v for k, v in errs.items() if v > 1e-4}
    assert not bad


def test_masked_row_carries_no_attention_gradient():
    net = small_net(seed=7)
    x = np.random.default_rng(7).normal(size=(1, 4, 12))
    valid = np.array([[False, False, True, True]])
    q, cache = net.forward(x, valid)
    dout = np.zeros_like(q)
    dout[0, :2] = 1.0
    g = net.backward(dout, cache)
    for i in range(2):
        for name in ("wq", "wk", "wv"):
            assert np.all(g[f"block{i}.{name}"] == 0.0)


def test_mlp_gradients_match_finite_differences():
    net = MLPQNet(12, 5, max_len=1, hidden=10, seed=2)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 1, 12))
    valid = np.ones((3, 1), dtype=bool)
    w = rng.normal(size=(3, 1, 5))
    errs = tensor_errors(analytic_grads(net, x, valid, w), numeric_grads(net, x, valid, w))
    assert max(errs.values()) <= 1e-4


def test_mlp_budget_matches_transformer():
    budget = transformer_param_count(12, 25, 8, 64, 2, 128)
    assert budget == TransformerQNet(12, 25).n_params
    h = matched_hidden(budget, 12, 25)
    mlp = MLPQNet(12, 25, hidden=h)
    assert abs(mlp.n_params - budget) / budget < 0.01
    assert abs(MLPQNet(12, 25, hidden=h + 1).n_params - budget) >= abs(mlp.n_params - budget)


def test_gelu_and_layer_norm_helpers():
    x = np.linspace(-4, 4, 101)
    y, t = gelu(x)
    h = 1e-6
    num = (gelu(x + h)[0] - gelu(x - h)[0]) / (2 * h)
    assert np.allclose(gelu_grad(x, t), num, atol=1e-7)
    z, _ = layer_norm(np.random.default_rng(0).normal(3, 5, size=(4, 16)), np.ones(16), np.zeros(16))
    assert np.allclose(z.mean(axis=-1), 0, atol=1e-12) and np.allclose(z.std(axis=-1), 1, atol=1e-3)


def test_clone_and_load_are_deep_copies():
    net = small_net()
    twin = net.clone()
    twin.params["head.b"][0] = 99.0
    assert net.params["head.b"][0] == 0.0
    with pytest.raises((KeyError, ValueError)):
        net.load_params({"head.b": np.zeros(5)})


def test_heads_must_divide_model_width():
    with pytest.raises(ValueError, match="divisible"):
        TransformerQNet(12, 5, d_model=10, n_heads=4)
