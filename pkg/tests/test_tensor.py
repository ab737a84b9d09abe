import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smasnn import tensor as tn
from smasnn.errors import ShapeError
from smasnn.layers import Linear, Module
from smasnn.tensor import Value, gradcheck

from oracles import conv_same


def rand(rng, *shape):
    return Value(rng.normal(size=shape))


# -- conv2d ------------------------------------------------------------------


def test_conv_all_ones_hand_values():
    x = Value(np.ones((1, 3, 3)))
    k = Value(np.ones((1, 1, 3, 3)))
    out = tn.conv2d(x, k, padding=1).data[0]
    assert out.tolist() == [[4, 6, 4], [6, 9, 6], [4, 6, 4]]


def test_conv_identity_kernel():
    x = np.random.default_rng(1).normal(size=(2, 1, 5, 4))
    out = tn.conv2d(Value(x), Value(np.ones((1, 1, 1, 1))))
    assert np.array_equal(out.data, x)


def test_conv_zero_kernel_gives_zero_output_and_input_grad():
    x = Value(np.random.default_rng(2).normal(size=(2, 3, 5, 5)), requires_grad=True)
    out = tn.conv2d(x, Value(np.zeros((4, 3, 3, 3))), Value(np.zeros(4)), padding=1)
    assert not out.data.any()
    out.sum().backward()
    assert not x.grad.any()


@pytest.mark.parametrize("k,stride,pad", [(1, 1, 0), (3, 1, 1), (3, 2, 1), (5, 1, 2), (5, 3, 0), (7, 1, 3)])
def test_conv_matches_scalar_loop(k, stride, pad):
    rng = np.random.default_rng(k * 10 + stride)
    x = rng.normal(size=(3, 7, 6))
    w = rng.normal(size=(2, 3, k, k))
    b = rng.normal(size=2)
    out = tn.conv2d(Value(x), Value(w), Value(b), stride=stride, padding=pad).data
    ho = (7 + 2 * pad - k) // stride + 1
    wo = (6 + 2 * pad - k) // stride + 1
    assert out.shape == (2, ho, wo)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    for o in range(2):
        for r in range(ho):
            for q in range(wo):
                ref = b[o] + sum(
                    xp[c, r * stride + i, q * stride + j] * w[o, c, i, j]
                    for c in range(3) for i in range(k) for j in range(k)
                )
                assert out[o, r, q] == pytest.approx(ref, abs=1e-12)


def test_conv_same_matches_list_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 5, 4))
    w = rng.normal(size=(3, 2, 5, 5))
    out = tn.conv2d(Value(x), Value(w), padding=2).data
    assert np.allclose(out, np.array(conv_same(x.tolist(), w.tolist())), atol=1e-12)


@given(st.sampled_from([1, 3, 5, 7, 9, 11]), st.integers(1, 12), st.integers(1, 12))
@settings(max_examples=30, deadline=None)
def test_same_padding_preserves_extent(k, h, w):
    x = Value(np.ones((1, 1, h, w)))
    out = tn.conv2d(x, Value(np.ones((2, 1, k, k))), padding=tn.same_padding(k))
    assert out.shape == (1, 2, h, w)


def test_conv_channel_mismatch_message():
    with pytest.raises(ShapeError, match="3 channels but kernel expects 2"):
        tn.conv2d(Value(np.ones((1, 3, 4, 4))), Value(np.ones((1, 2, 3, 3))))


def test_same_padding_rejects_even_kernel():
    with pytest.raises(ShapeError):
        tn.same_padding(4)


# -- batch norm --------------------------------------------------------------


def _bn(x, training=True, mean=None, var=None):
    c = x.shape[1]
    return tn.batch_norm(Value(x), Value(np.ones(c)), Value(np.zeros(c)),
                         np.zeros(c) if mean is None else mean, np.ones(c) if var is None else var, training)


def test_batch_norm_train_standardizes():
    x = np.random.default_rng(4).normal(3.0, 2.0, size=(8, 3, 4, 4))
    out = _bn(x).data
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-5 * 10)


def test_batch_norm_constant_channel_gives_beta():
    x = np.full((4, 2, 3, 3), 7.0)
    out = tn.batch_norm(Value(x), Value(np.ones(2)), Value(np.array([0.5, -1.0])), None, None, True)
    assert np.all(np.isfinite(out.data))
    assert np.allclose(out.data[:, 0], 0.5) and np.allclose(out.data[:, 1], -1.0)


def test_batch_norm_eval_with_matching_stats_equals_train():
    x = np.random.default_rng(5).normal(size=(6, 3, 5, 5))
    train = _bn(x).data
    mean, var = x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3))
    ev = _bn(x, training=False, mean=mean, var=var).data
    assert np.allclose(train, ev, atol=1e-6)


def test_batch_norm_running_update():
    x = np.random.default_rng(6).normal(size=(4, 2, 3, 3))
    rm, rv = np.zeros(2), np.ones(2)
    tn.batch_norm(Value(x), Value(np.ones(2)), Value(np.zeros(2)), rm, rv, True)
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))


# -- pooling -----------------------------------------------------------------


def test_global_average():
    out = tn.avg_pool_global(Value(np.array([[1.0, 2.0], [3.0, 4.0]])))
    assert out.shape == (1, 1) and out.item() == 2.5


def test_max_pool_value():
    assert tn.max_pool2d(Value(np.array([[1.0, 2.0], [3.0, 4.0]])), 2, 2).item() == 4.0


def test_max_pool_tie_routes_to_first_index():
    base = np.array([[5.0, 5.0], [-1.0, -1.0]])
    x = Value(base.copy(), requires_grad=True)
    tn.max_pool2d(x, 2, 2).sum().backward()
    assert x.grad.tolist() == [[1.0, 0.0], [0.0, 0.0]]
    # at the tie each entry has left derivative 0 and right derivative 1; the
    # chosen subgradient must lie between them for both entries
    h = 1e-6
    for idx in [(0, 0), (0, 1)]:
        up, down = base.copy(), base.copy()
        up[idx] += h
        down[idx] -= h
        right = (tn.max_pool2d(Value(up), 2, 2).item() - 5.0) / h
        left = (5.0 - tn.max_pool2d(Value(down), 2, 2).item()) / h
        assert left == pytest.approx(0.0, abs=1e-6) and right == pytest.approx(1.0, abs=1e-6)
        assert left <= x.grad[idx] <= right


def test_max_pool_padding_and_grad():
    rng = np.random.default_rng(7)
    x = Value(rng.normal(size=(2, 3, 5, 5)))
    err = gradcheck(lambda: (tn.max_pool2d(x, 3, 2, 1) * 1.7).sum(), [x], rng=rng)
    assert err < 1e-6


# -- softmax -----------------------------------------------------------------


def test_softmax_uniform():
    assert np.allclose(tn.softmax(Value(np.zeros(4)), 0).data, 0.25)


def test_softmax_ln2():
    out = tn.softmax(Value(np.array([math.log(2.0), 0.0])), 0).data
    assert out == pytest.approx([2 / 3, 1 / 3], abs=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
@settings(max_examples=100, deadline=None)
def test_softmax_normalized_and_shift_invariant(vals, c):
    x = np.array(vals)
    p = tn.softmax(Value(x), 0).data
    assert abs(p.sum() - 1.0) < 1e-10 and np.all(p > 0)
    assert np.allclose(tn.softmax(Value(x + c), 0).data, p, atol=1e-12)


def test_log_softmax_matches_log_of_softmax():
    x = np.random.default_rng(8).normal(size=(3, 5)) * 10
    assert np.allclose(tn.log_softmax(Value(x), 1).data, np.log(tn.softmax(Value(x), 1).data))


# -- elementwise -------------------------------------------------------------


def test_broadcast_time_weight():
    w = np.arange(1.0, 4.0).reshape(3, 1, 1, 1)
    x = np.ones((3, 2, 2, 2))
    out = (Value(x) * Value(w)).data
    for t in range(3):
        assert np.all(out[t] == t + 1)


def test_relu_values_and_zero_subgradient():
    x = Value(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    y = tn.relu(x)
    assert y.data.tolist() == [0.0, 0.0, 2.0]
    y.sum().backward()
    assert x.grad.tolist() == [0.0, 0.0, 1.0]


def test_mean_of_identical_planes():
    p = np.random.default_rng(9).normal(size=(3, 4))
    assert np.array_equal(Value(np.stack([p] * 4)).mean(axis=0).data, p)


def test_non_broadcastable_rejected():
    with pytest.raises(ShapeError):
        Value(np.ones((2, 3))) + Value(np.ones((3, 2)))


def test_zero_extent_rejected():
    with pytest.raises(ShapeError):
        Value(np.ones((0, 3)))


# -- backward ----------------------------------------------------------------


def test_linear_map_gradient_is_input():
    x = np.random.default_rng(10).normal(size=(3, 4))
    w = Value(np.ones((3, 4)), requires_grad=True)
    (w * Value(x)).sum().backward()
    assert np.array_equal(w.grad, x)


def test_fan_out_gradients_sum():
    a = Value(np.array(2.0), requires_grad=True)
    (a * a + a * 3.0).backward()
    assert a.grad == pytest.approx(2 * 2.0 + 3.0)


def test_backward_non_scalar_rejected():
    with pytest.raises(ShapeError):
        Value(np.ones(3), requires_grad=True).relu().backward()


def test_backward_twice_rejected():
    a = Value(np.ones(3), requires_grad=True)
    loss = (a * 2.0).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_disconnected_parameter_gets_zero_gradient():
    class Two(Module):
        def __init__(self):
            super().__init__()
            rng = np.random.default_rng(0)
            self.used = self.add_child("used", Linear(3, 2, rng))
            self.unused = self.add_child("unused", Linear(3, 2, rng))

    m = Two()
    m.zero_grad()
    m.used(Value(np.ones((1, 1, 3)))).sum().backward()
    assert not m.unused.weight.grad.any() and m.used.weight.grad.any()


def test_forward_is_deterministic():
    rng = np.random.default_rng(11)
    x, w = rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(4, 3, 3, 3))
    a = tn.conv2d(Value(x), Value(w), padding=1).data
    b = tn.conv2d(Value(x), Value(w), padding=1).data
    assert a.tobytes() == b.tobytes()


# -- gradient checks of each op -----------------------------------------------


def _op_cases(rng):
    c = Value(rng.normal(size=(2, 3, 4)))  # fixed projection makes every loss non-trivial
    a, b = rand(rng, 2, 3, 4), rand(rng, 1, 3, 1)
    pos = Value(rng.uniform(0.5, 2.0, size=(2, 3, 4)))
    x4, k = rand(rng, 2, 3, 5, 5), rand(rng, 2, 3, 3, 3)
    bias, gamma, beta = rand(rng, 2), Value(rng.uniform(0.5, 1.5, 3)), rand(rng, 3)
    w, wb = rand(rng, 5, 4), rand(rng, 5)
    proj4 = Value(rng.normal(size=(2, 2, 3, 3)))
    proj_bn = Value(rng.normal(size=(2, 3, 5, 5)))
    return {
        "add": (lambda: ((a + b) * c).sum(), [a, b]),
        "sub": (lambda: ((a - b) * c).sum(), [a, b]),
        "mul": (lambda: ((a * b) * c).sum(), [a, b]),
        "div": (lambda: ((a / pos) * c).sum(), [a, pos]),
        "scale": (lambda: (tn.scale(a, -2.5) * c).sum(), [a]),
        "relu": (lambda: (tn.relu(a) * c).sum(), [a]),
        "exp": (lambda: (tn.exp(a) * c).sum(), [a]),
        "log": (lambda: (tn.log(pos) * c).sum(), [pos]),
        "square": (lambda: (tn.square(a) * c).sum(), [a]),
        "sum_axis": (lambda: (a.sum(axis=1) * c[:, 0, :]).sum(), [a]),
        "mean_axis": (lambda: (a.mean(axis=(0, 2), keepdims=True) * c).sum(), [a]),
        "reshape": (lambda: (a.reshape(4, 6) * c.reshape(4, 6)).sum(), [a]),
        "transpose": (lambda: (a.transpose(2, 0, 1) * c.transpose(2, 0, 1)).sum(), [a]),
        "getitem": (lambda: (a[:, 1:, ::2] * c[:, 1:, ::2]).sum(), [a]),
        "stack": (lambda: (tn.stack([a, a * 2.0], axis=1) * tn.stack([c, c], axis=1)).sum(), [a]),
        "concat": (lambda: (tn.concat([a, b * 1.0 + a[:1]], axis=0)[1:] * c).sum(), [a, b]),
        "softmax": (lambda: (tn.softmax(a, axis=1) * c).sum(), [a]),
        "log_softmax": (lambda: (tn.log_softmax(a, axis=2) * c).sum(), [a]),
        "affine": (lambda: (tn.affine(a, w, wb) * Value(np.ones((2, 3, 5)))).sum(), [a, w, wb]),
        "conv2d": (lambda: (tn.conv2d(x4, k, bias, stride=2, padding=1) * proj4).sum(), [x4, k, bias]),
        "batch_norm": (lambda: (tn.batch_norm(x4, gamma, beta, None, None, True) * proj_bn).sum(),
                       [x4, gamma, beta]),
        "max_pool": (lambda: (tn.max_pool2d(x4, 2, 2) * Value(np.ones((2, 3, 2, 2)))).sum(), [x4]),
        "avg_pool": (lambda: (tn.avg_pool_global(x4) * Value(np.arange(6.0).reshape(2, 3, 1, 1))).sum(), [x4]),
    }


@pytest.mark.parametrize("seed", range(5))
def test_every_op_passes_gradcheck(seed):
    rng = np.random.default_rng(seed)
    for name, (fn, inputs) in _op_cases(rng).items():
        err = gradcheck(fn, inputs, n_coords=20, step=1e-4, rng=rng)
        assert err < 1e-4, name
