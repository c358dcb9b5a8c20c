import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridlander.errors import ContractViolation
from gridlander.rng import Rng
from gridlander.nncore import (
    Activation,
    AttentionParams,
    DenseLayer,
    batchnorm_inference,
    conv2d_forward,
    dense_backward,
    dense_forward,
    gelu,
    layernorm,
    maxpool2_forward,
    multihead_attention,
    softmax_rows,
)

from helpers import fd_grad, rel_err


# --- dense forward -----------------------------------------------------------


def test_dense_forward_zero_layer():
    layer = DenseLayer(np.zeros((4, 3)), np.zeros(4), Activation.RELU)
    assert np.array_equal(dense_forward(layer, np.array([1.0, -2.0, 3.0])), np.zeros(4))


def test_dense_forward_identity():
    layer = DenseLayer(np.eye(3), np.zeros(3), Activation.IDENTITY)
    x = np.array([1.0, 2.0, 3.0])
    assert np.allclose(dense_forward(layer, x), x)


def test_dense_forward_relu_case():
    layer = DenseLayer(np.array([[1.0, 1.0], [1.0, -1.0]]), np.zeros(2), Activation.RELU)
    out = dense_forward(layer, np.array([1.0, 2.0]))
    assert np.allclose(out, [3.0, 0.0])


def test_dense_forward_batch_matches_rows():
    rng = np.random.default_rng(0)
    layer = DenseLayer(rng.standard_normal((4, 3)), rng.standard_normal(4), Activation.GELU)
    batch = rng.standard_normal((5, 3))
    stacked = dense_forward(layer, batch)
    rows = np.stack([dense_forward(layer, row) for row in batch])
    assert np.allclose(stacked, rows)


def test_dense_forward_dim_mismatch():
    layer = DenseLayer(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ContractViolation):
        dense_forward(layer, np.zeros(4))


def test_dense_layer_bias_mismatch():
    with pytest.raises(ContractViolation):
        DenseLayer(np.zeros((2, 3)), np.zeros(3))


# --- dense backward ----------------------------------------------------------


def test_dense_backward_zero_grad():
    rng = np.random.default_rng(1)
    layer = DenseLayer(rng.standard_normal((4, 3)), rng.standard_normal(4), Activation.GELU)
    gw, gb, gx = dense_backward(layer, rng.standard_normal(3), np.zeros(4))
    assert not gw.any() and not gb.any() and not gx.any()


def test_dense_backward_scalar_chain_rule():
    w = np.array([[1.7]])
    layer = DenseLayer(w, np.zeros(1), Activation.IDENTITY)
    gw, gb, gx = dense_backward(layer, np.array([2.0]), np.array([1.0]))
    assert gw.item() == pytest.approx(2.0)
    assert gb.item() == pytest.approx(1.0)
    assert gx.item() == pytest.approx(1.7)


def test_dense_backward_finite_difference_4x3():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    x = rng.standard_normal(3)
    probe = rng.standard_normal(4)  # scalar loss = probe . output
    layer = DenseLayer(w, b, Activation.GELU)

    def loss():
        return float(probe @ dense_forward(layer, x))

    gw, gb, gx = dense_backward(layer, x, probe)
    assert rel_err(gw, fd_grad(loss, w)).max() < 1e-4
    assert rel_err(gb, fd_grad(loss, b)).max() < 1e-4
    assert rel_err(gx, fd_grad(loss, x)).max() < 1e-4


def _random_stack(rng, depth):
    dims = [int(d) for d in rng.integers(2, 6, size=depth + 1)]
    layers = []
    for i in range(depth):
        act = Activation.GELU if i < depth - 1 else Activation.IDENTITY
        layers.append(
            DenseLayer(
                rng.standard_normal((dims[i + 1], dims[i])),
                rng.standard_normal(dims[i + 1]),
                act,
            )
        )
    return layers, dims


def _stack_gradients(layers, x, probe):
    """Analytic chain-rule gradients of probe . stack(x)."""
    activations = [x]
    for layer in layers:
        activations.append(dense_forward(layer, activations[-1]))
    grads = []
    g = probe
    for layer, layer_in in zip(reversed(layers), reversed(activations[:-1])):
        gw, gb, g = dense_backward(layer, layer_in, g)
        grads.append((gw, gb))
    grads.reverse()
    return grads, g


def test_gradient_correctness_100_trials_stacks_to_depth_3():
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        depth = int(rng.integers(1, 4))
        layers, dims = _random_stack(rng, depth)
        x = rng.standard_normal(dims[0])
        probe = rng.standard_normal(dims[-1])

        def loss():
            h = x
            for layer in layers:
                h = dense_forward(layer, h)
            return float(probe @ h)

        grads, gx = _stack_gradients(layers, x, probe)
        for layer, (gw, gb) in zip(layers, grads):
            assert rel_err(gw, fd_grad(loss, layer.weights)).max() < 1e-4
            assert rel_err(gb, fd_grad(loss, layer.bias)).max() < 1e-4
        assert rel_err(gx, fd_grad(loss, x)).max() < 1e-4


def test_relu_backward_matches_fd_away_from_kinks():
    checked = 0
    seed = 0
    while checked < 30:
        seed += 1
        rng = np.random.default_rng(5000 + seed)
        layer = DenseLayer(
            rng.standard_normal((4, 3)), rng.standard_normal(4), Activation.RELU
        )
        x = rng.standard_normal(3)
        z = layer.weights @ x + layer.bias
        if np.abs(z).min() < 0.05:  # keep h=1e-3 probes away from the kink
            continue
        probe = rng.standard_normal(4)

        def loss():
            return float(probe @ dense_forward(layer, x))

        gw, gb, gx = dense_backward(layer, x, probe)
        assert rel_err(gw, fd_grad(loss, layer.weights)).max() < 1e-4
        assert rel_err(gx, fd_grad(loss, x)).max() < 1e-4
        checked += 1


def test_gelu_exact_values():
    # x * Phi(x) at 0 and symmetry checks
    assert gelu(np.array([0.0]))[0] == 0.0
    x = np.array([1.0])
    assert gelu(x)[0] == pytest.approx(0.8413447460685429, abs=1e-12)


# --- conv --------------------------------------------------------------------


def naive_conv(x, kernels, bias, stride, padding):
    c, h, w = x.shape
    co, ci, kh, kw = kernels.shape
    xp = np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((co, oh, ow))
    for o in range(co):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for cc in range(ci):
                    for u in range(kh):
                        for v in range(kw):
                            acc += xp[cc, i * stride + u, j * stride + v] * float(
                                kernels[o, cc, u, v]
                            )
                out[o, i, j] = acc + (float(bias[o]) if bias is not None else 0.0)
    return out


def test_conv_identity_kernel():
    rng = np.random.default_rng(3)
    x = rng.random((1, 3, 3)).astype(np.float32)
    k = np.zeros((1, 1, 3, 3), dtype=np.float32)
    k[0, 0, 1, 1] = 1.0
    assert np.allclose(conv2d_forward(x, k, None, 1, 1), x)


def test_conv_all_ones_sum():
    x = np.ones((1, 3, 3), dtype=np.float32)
    k = np.ones((1, 1, 3, 3), dtype=np.float32)
    out = conv2d_forward(x, k, None, 1, 0)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 9.0


def test_conv_matches_naive_loop():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 8, 8)).astype(np.float32)
    k = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    for stride, padding in [(1, 0), (1, 1), (2, 1), (3, 2)]:
        mine = conv2d_forward(x, k, b, stride, padding)
        ref = naive_conv(x, k, b, stride, padding)
        assert mine.shape == ref.shape
        assert np.abs(mine - ref).max() < 1e-6


def test_conv_1x1_matches_naive_loop():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((5, 6, 7)).astype(np.float32)
    k = rng.standard_normal((2, 5, 1, 1)).astype(np.float32)
    assert np.abs(conv2d_forward(x, k, None, 2, 0) - naive_conv(x, k, None, 2, 0)).max() < 1e-6


def test_conv_output_size_formula():
    x = np.zeros((1, 11, 9), dtype=np.float32)
    k = np.zeros((2, 1, 3, 3), dtype=np.float32)
    out = conv2d_forward(x, k, None, 2, 1)
    assert out.shape == (2, (11 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)


def test_conv_bad_geometry():
    x = np.zeros((1, 2, 2), dtype=np.float32)
    k = np.zeros((1, 1, 5, 5), dtype=np.float32)
    with pytest.raises(ContractViolation):
        conv2d_forward(x, k, None, 1, 0)
    with pytest.raises(ContractViolation):
        conv2d_forward(x, np.zeros((1, 3, 3, 3), dtype=np.float32), None, 1, 1)


# --- pooling -----------------------------------------------------------------


def test_maxpool_constant_image():
    x = np.full((2, 6, 4), 0.7, dtype=np.float32)
    out = maxpool2_forward(x)
    assert out.shape == (2, 3, 2)
    assert (out == np.float32(0.7)).all()


def test_maxpool_single_window():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32)
    assert maxpool2_forward(x)[0, 0, 0] == 4.0


def test_maxpool_window_scan_oracle():
    rng = np.random.default_rng(6)
    x = rng.random((1, 160, 160)).astype(np.float32)
    out = maxpool2_forward(x)
    assert out.shape == (1, 80, 80)
    for i in range(0, 160, 2):
        for j in range(0, 160, 2):
            assert out[0, i // 2, j // 2] == x[0, i : i + 2, j : j + 2].max()


def test_maxpool_odd_dims_rejected():
    with pytest.raises(ContractViolation):
        maxpool2_forward(np.zeros((1, 3, 4), dtype=np.float32))


# --- normalization -----------------------------------------------------------


def test_batchnorm_identity_params():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 4, 4)).astype(np.float32)
    out = batchnorm_inference(x, np.zeros(3), np.ones(3), np.ones(3), np.zeros(3), eps=0.0)
    assert np.allclose(out, x, atol=1e-6)


def test_batchnorm_gamma_zero_gives_beta():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 3)).astype(np.float32)
    beta = np.array([0.5, -1.5])
    out = batchnorm_inference(x, np.zeros(2), np.ones(2), np.zeros(2), beta)
    assert np.allclose(out[0], 0.5) and np.allclose(out[1], -1.5)


def test_batchnorm_matches_scalar_loop():
    rng = np.random.default_rng(9)
    c, h, w = 4, 5, 6
    x = rng.standard_normal((c, h, w)).astype(np.float32)
    mean = rng.standard_normal(c)
    var = rng.random(c) + 0.1
    gamma = rng.standard_normal(c)
    beta = rng.standard_normal(c)
    eps = 1e-5
    out = batchnorm_inference(x, mean, var, gamma, beta, eps)
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                ref = (float(x[ch, i, j]) - mean[ch]) / np.sqrt(var[ch] + eps) * gamma[ch] + beta[ch]
                assert abs(float(out[ch, i, j]) - ref) < 1e-6


def test_batchnorm_negative_variance_rejected():
    x = np.zeros((1, 2, 2), dtype=np.float32)
    with pytest.raises(ContractViolation):
        batchnorm_inference(x, np.zeros(1), np.array([-0.1]), np.ones(1), np.zeros(1))


def test_layernorm_constant_input_gives_beta():
    x = np.full(16, 3.3, dtype=np.float32)
    beta = np.linspace(-1, 1, 16)
    out = layernorm(x, np.ones(16), beta, eps=1e-6)
    assert np.allclose(out, beta, atol=1e-5)


def test_layernorm_already_normalized():
    out = layernorm(np.array([-1.0, 1.0]), np.ones(2), np.zeros(2), eps=0.0)
    assert np.allclose(out, [-1.0, 1.0], atol=1e-12)


def test_layernorm_statistics_length_384():
    rng = np.random.default_rng(10)
    x = (rng.standard_normal(384) * 3.0 + 1.5).astype(np.float32)
    out = layernorm(x, np.ones(384), np.zeros(384), eps=1e-12).astype(np.float64)
    assert abs(out.mean()) < 1e-6
    assert abs(out.var() - 1.0) < 1e-4


def test_layernorm_length_mismatch():
    with pytest.raises(ContractViolation):
        layernorm(np.zeros(4), np.ones(3), np.zeros(4))


# --- attention ---------------------------------------------------------------


def _random_attention_params(rng, dim, dtype=np.float64):
    def mat():
        return rng.standard_normal((dim, dim)).astype(dtype) * 0.3

    def vec():
        return rng.standard_normal(dim).astype(dtype) * 0.1

    return AttentionParams(mat(), mat(), mat(), mat(), vec(), vec(), vec(), vec())


def naive_attention(tokens, params, heads):
    t, d = tokens.shape
    dh = d // heads
    x = np.asarray(tokens, dtype=np.float64)
    q = x @ params.wq.T + params.bq
    k = x @ params.wk.T + params.bk
    v = x @ params.wv.T + params.bv
    ctx = np.zeros((t, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        for i in range(t):
            row = np.exp(scores[i] - scores[i].max())
            ctx[i, sl] = (row / row.sum()) @ v[:, sl]
    return ctx @ params.wo.T + params.bo


def test_attention_single_token():
    rng = np.random.default_rng(11)
    params = _random_attention_params(rng, 4)
    tokens = rng.standard_normal((1, 4))
    out, attn = multihead_attention(tokens, params, 2, return_weights=True)
    assert attn.shape == (2, 1, 1)
    assert np.allclose(attn, 1.0)
    v = tokens @ params.wv.T + params.bv
    assert np.allclose(out, v @ params.wo.T + params.bo, atol=1e-10)


def test_attention_zero_projections():
    dim = 6
    zeros = AttentionParams(
        *(np.zeros((dim, dim)) for _ in range(4)), *(np.zeros(dim) for _ in range(4))
    )
    tokens = np.random.default_rng(12).standard_normal((3, dim))
    assert not multihead_attention(tokens, zeros, 3).any()


def test_attention_matches_naive_loop():
    rng = np.random.default_rng(13)
    params = _random_attention_params(rng, 8)
    tokens = rng.standard_normal((4, 8))
    out = multihead_attention(tokens, params, 2)
    assert np.abs(out - naive_attention(tokens, params, 2)).max() < 1e-5


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(14)
    params = _random_attention_params(rng, 12)
    tokens = rng.standard_normal((7, 12)) * 5.0
    _, attn = multihead_attention(tokens, params, 4, return_weights=True)
    assert np.abs(attn.sum(axis=-1) - 1.0).max() < 1e-6
    assert attn.min() >= 0.0 and attn.max() <= 1.0


def test_attention_indivisible_heads_rejected():
    rng = np.random.default_rng(15)
    params = _random_attention_params(rng, 6)
    with pytest.raises(ContractViolation):
        multihead_attention(rng.standard_normal((2, 6)), params, 4)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.sampled_from([1, 2, 4]))
def test_softmax_rows_property(seed, rows_scale):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((3 * rows_scale, 5)) * rng.uniform(0.1, 50)
    p = softmax_rows(m)
    assert np.abs(p.sum(axis=-1) - 1.0).max() < 1e-6
    assert p.min() >= 0.0 and p.max() <= 1.0


def test_softmax_extreme_logits():
    m = np.array([[1000.0, 0.0, -3000.0], [-900.0, -900.5, -901.0]])
    p = softmax_rows(m)
    assert np.abs(p.sum(axis=-1) - 1.0).max() < 1e-12


# --- seeded random streams -----------------------------------------------------


def test_rng_identical_seed_identical_stream():
    a, b = Rng(123456789), Rng(123456789)
    assert np.array_equal(a.uniform(size=64), b.uniform(size=64))
    assert np.array_equal(a.integers(10, size=64), b.integers(10, size=64))
    assert np.array_equal(a.normal(size=64), b.normal(size=64))


def test_rng_derived_streams_differ():
    root = Rng(7)
    u1 = root.derive(1).uniform(size=32)
    u2 = root.derive(2).uniform(size=32)
    again = Rng(7).derive(1).uniform(size=32)
    assert not np.array_equal(u1, u2)
    assert np.array_equal(u1, again)


def test_rng_truncated_normal_respects_clip():
    draws = Rng(9).truncated_normal((5000,), std=0.02, clip=2.0)
    assert np.abs(draws).max() <= 2.0 * 0.02
    # truncation at 2 sigma shrinks the std by sqrt(1 - 4 phi(2) / (Phi(2)-Phi(-2)))
    assert draws.std() == pytest.approx(0.02 * 0.8797, rel=0.05)


# --- determinism -------------------------------------------------------------


def test_ops_are_pure_and_deterministic():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((3, 8, 8)).astype(np.float32)
    k = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
    a = conv2d_forward(x, k, None, 1, 1)
    b = conv2d_forward(x, k, None, 1, 1)
    assert np.array_equal(a, b)
    layer = DenseLayer(rng.standard_normal((4, 5)).astype(np.float32),
                       rng.standard_normal(4).astype(np.float32), Activation.GELU)
    v = rng.standard_normal(5).astype(np.float32)
    assert np.array_equal(dense_forward(layer, v), dense_forward(layer, v))
