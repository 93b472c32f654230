import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lle.tensor import NonFiniteError, OpCounter, Rng, ShapeError, Tape, Tensor, backward, dump, ops, parse_dump
from gradcheck import check_gradients
from oracles import naive_conv2d, naive_conv_transpose2d, naive_maxpool2

GOLDEN = Path(__file__).parent / "golden"


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float32), requires_grad=grad)


def rand(shape, seed=0, grad=True, scale=1.0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape).astype(np.float32) * scale, requires_grad=grad)


# ------------------------------------------------------------------- conv2d

def test_conv2d_scalar_affine():
    out = ops.conv2d(T(np.full((1, 1, 3, 3), 2.0)), T([[[[3.0]]]]), T([1.0]))
    assert out.shape == (1, 1, 3, 3)
    assert np.all(out.data == 7.0)


def test_conv2d_trace_window():
    out = ops.conv2d(T([[[[1, 2], [3, 4]]]]), T([[[[1, 0], [0, 1]]]]), T([0.0]))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 5.0


@pytest.mark.parametrize("stride,pad", [(2, 1), (1, 0), (1, 1), (2, 0)])
def test_conv2d_matches_naive_loops(stride, pad):
    x, w, b = rand((1, 2, 5, 5), 1), rand((3, 2, 3, 3), 2), rand((3,), 3)
    got = ops.conv2d(x, w, b, stride=stride, padding=pad).data
    want = naive_conv2d(x.data.astype(np.float64), w.data.astype(np.float64), b.data, stride, pad)
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


def test_conv2d_batched_matches_naive():
    x, w, b = rand((3, 2, 6, 7), 4), rand((2, 2, 4, 4), 5), rand((2,), 6)
    got = ops.conv2d(x, w, b, stride=2, padding=1).data
    want = naive_conv2d(x.data.astype(np.float64), w.data.astype(np.float64), b.data, 2, 1)
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("k", [1, 3, 4])
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("pad", [0, 1])
def test_conv2d_output_shape_sweep(k, stride, pad):
    h, w = 9, 8
    out = ops.conv2d(rand((1, 2, h, w), grad=False), rand((3, 2, k, k), grad=False), None, stride, pad)
    assert out.shape == (1, 3, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)


def test_conv2d_linearity():
    x, z = rand((1, 2, 7, 7), 1, False), rand((1, 2, 7, 7), 2, False)
    w = rand((3, 2, 3, 3), 3, False)
    a, b = 0.7, -1.3
    lhs = ops.conv2d(Tensor(a * x.data + b * z.data), w, None, 1, 1).data
    rhs = a * ops.conv2d(x, w, None, 1, 1).data + b * ops.conv2d(z, w, None, 1, 1).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-5


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ShapeError, match="channels"):
        ops.conv2d(rand((1, 2, 4, 4)), rand((1, 3, 3, 3)))


def test_conv2d_rejects_non_finite():
    x = np.zeros((1, 1, 4, 4), np.float32)
    x[0, 0, 1, 1] = np.nan
    with pytest.raises(NonFiniteError):
        ops.conv2d(T(x), rand((1, 1, 3, 3)))


# --------------------------------------------------------- conv_transpose2d

def test_conv_transpose_single_pixel():
    out = ops.conv_transpose2d(T([[[[2.0]]]]), T([[[[1, 2], [3, 4]]]]), stride=2)
    np.testing.assert_array_equal(out.data, [[[[2, 4], [6, 8]]]])


def test_conv_transpose_zero_input():
    out = ops.conv_transpose2d(T(np.zeros((2, 3, 4, 5))), rand((3, 2, 2, 2)), stride=2)
    assert out.shape == (2, 2, 8, 10)
    assert not out.data.any()


def test_conv_transpose_matches_scatter_oracle():
    x, w, b = rand((1, 2, 3, 3), 7), rand((2, 3, 2, 2), 8), rand((3,), 9)
    got = ops.conv_transpose2d(x, w, b, stride=2).data
    want = naive_conv_transpose2d(x.data.astype(np.float64), w.data.astype(np.float64), b.data, 2)
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


def test_conv_transpose_rejects_overlap():
    with pytest.raises(ValueError, match="kernel == stride"):
        ops.conv_transpose2d(rand((1, 1, 2, 2)), rand((1, 1, 3, 3)), stride=2)


def test_conv_transpose_is_adjoint_of_strided_conv():
    # <conv(u), v> == <u, convT(v)> for kernel == stride, no padding
    u, v, w = rand((1, 3, 6, 6), 1, False), rand((1, 2, 3, 3), 2, False), rand((2, 3, 2, 2), 3, False)
    lhs = float(np.sum(ops.conv2d(u, w, None, 2, 0).data.astype(np.float64) * v.data))
    rhs = float(np.sum(u.data.astype(np.float64) * ops.conv_transpose2d(v, Tensor(w.data), stride=2).data))
    assert lhs == pytest.approx(rhs, rel=1e-5)


# ------------------------------------------------------------- elementwise

def test_sigmoid_zero():
    assert ops.sigmoid(T([0.0])).data[0] == 0.5


def test_leaky_relu_negative():
    assert ops.leaky_relu(T([-1.0]), 0.2).data[0] == pytest.approx(-0.2)


def test_abs_mean_identical():
    assert ops.abs_mean(T([1, 2, 3]), T([1, 2, 3])).item() == 0.0


def test_sigmoid_stays_inside_open_interval():
    s = ops.sigmoid(T([-200.0, -30.0, 17.0, 200.0])).data
    assert np.all(s > 0) and np.all(s < 1)
    assert s[3] == np.nextafter(np.float32(1), np.float32(0))
    assert s[1] == pytest.approx(np.exp(-30.0), rel=1e-6)


@pytest.mark.parametrize("op", [ops.add, ops.sub, ops.mul, ops.div, ops.abs_mean])
def test_binary_ops_reject_shape_mismatch(op):
    with pytest.raises(ShapeError):
        op(T([1.0, 2.0]), T([1.0, 2.0, 3.0]))


# ----------------------------------------------------------------- maxpool2

def test_maxpool_basic():
    assert ops.maxpool2(T([[[[1, 2], [3, 4]]]])).data.item() == 4


def test_maxpool_tie_goes_to_first():
    x = T([[[[5, 5], [5, 5]]]], grad=True)
    with Tape():
        y = ops.sum(ops.maxpool2(x))
    backward(y)
    assert y.item() == 5
    np.testing.assert_array_equal(x.grad, [[[[1, 0], [0, 0]]]])


def test_maxpool_matches_naive():
    x = rand((1, 3, 8, 8), 11, False)
    np.testing.assert_array_equal(ops.maxpool2(x).data, naive_maxpool2(x.data).astype(np.float32))


def test_maxpool_rejects_odd():
    with pytest.raises(ShapeError, match="even"):
        ops.maxpool2(rand((1, 1, 3, 4)))


# ---------------------------------------------------------- concat / d2s

def test_concat_simple():
    out = ops.concat_channels(T([[[[1.0]]]]), T([[[[2.0]]]]))
    assert out.shape == (1, 2, 1, 1)
    np.testing.assert_array_equal(out.data.ravel(), [1, 2])


def test_concat_with_empty_is_identity():
    x = rand((1, 3, 2, 2), grad=False)
    np.testing.assert_array_equal(ops.concat_channels(x, T(np.zeros((1, 0, 2, 2)))).data, x.data)


def test_concat_gradient_splits():
    a, b = rand((1, 2, 3, 3), 1), rand((1, 1, 3, 3), 2)
    with Tape():
        y = ops.sum(ops.concat_channels(a, b))
    backward(y)
    np.testing.assert_array_equal(a.grad, np.ones(a.shape))
    np.testing.assert_array_equal(b.grad, np.ones(b.shape))


def test_concat_rejects_spatial_mismatch():
    with pytest.raises(ShapeError):
        ops.concat_channels(rand((1, 1, 2, 2)), rand((1, 1, 2, 3)))


def test_depth_to_space_single_block():
    out = ops.depth_to_space2(T(np.array([1, 2, 3, 4], np.float32).reshape(1, 4, 1, 1)))
    np.testing.assert_array_equal(out.data, [[[[1, 2], [3, 4]]]])


def test_depth_to_space_zero():
    assert not ops.depth_to_space2(T(np.zeros((1, 8, 3, 2)))).data.any()


def test_depth_to_space_rejects_bad_channels():
    with pytest.raises(ShapeError, match="divisible by 4"):
        ops.depth_to_space2(rand((1, 6, 2, 2)))


# ----------------------------------------------------------------- backward

def test_backward_sum():
    x = T([1.0, 2.0, 3.0], grad=True)
    with Tape():
        y = ops.sum(x)
    backward(y)
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_backward_square():
    x = T([2.0], grad=True)
    with Tape():
        y = ops.sum(ops.mul(x, x))
    backward(y)
    np.testing.assert_array_equal(x.grad, [4.0])


def test_backward_accumulates():
    x = T([2.0], grad=True)
    with Tape():
        y = ops.sum(ops.mul(x, x))
    backward(y)
    backward(y)
    np.testing.assert_array_equal(x.grad, [8.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_rejects_non_scalar():
    x = T([1.0, 2.0], grad=True)
    with Tape():
        y = ops.scale(x, 2.0)
    with pytest.raises(ShapeError, match="scalar"):
        backward(y)


def test_no_tape_records_nothing():
    x = T([1.0], grad=True)
    y = ops.scale(x, 3.0)
    assert y.is_leaf and not y.requires_grad


def test_tape_records_in_execution_order():
    x = T([1.0, 2.0], grad=True)
    with Tape() as tape:
        a = ops.scale(x, 2.0)
        b = ops.sigmoid(a)
        ops.sum(b)
    assert [n.op for n in tape.nodes] == ["scale", "sigmoid", "sum"]
    seen = set()
    for node in tape.nodes:
        for inp in node.inputs:
            assert inp.is_leaf or id(inp) in seen
        seen.add(id(node.output))


def test_op_counter():
    with OpCounter() as c:
        ops.conv2d(rand((1, 1, 3, 3)), rand((1, 1, 1, 1)))
        ops.sigmoid(T([0.0]))
    assert c["conv2d"] == 1 and c["sigmoid"] == 1


# ---------------------------------------------------- finite-difference suite

def _pos(shape, seed):
    return Tensor(np.random.default_rng(seed).uniform(0.5, 2.0, shape).astype(np.float32), requires_grad=True)


def _away_from_zero(shape, seed, margin=0.05):
    v = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    v = np.where(np.abs(v) < margin, np.sign(v + 1e-9) * margin * 2, v)
    return Tensor(v, requires_grad=True)


def _distinct(shape, seed):
    n = int(np.prod(shape))
    v = np.random.default_rng(seed).permutation(n).astype(np.float32) * 0.01
    return Tensor(v.reshape(shape), requires_grad=True)


GRAD_CASES = {
    "conv2d_s2p1": (lambda x, w, b: ops.conv2d(x, w, b, 2, 1), lambda: [rand((1, 2, 5, 5), 1), rand((3, 2, 3, 3), 2), rand((3,), 3)]),
    "conv2d_s1p1_batch": (lambda x, w, b: ops.conv2d(x, w, b, 1, 1), lambda: [rand((2, 2, 5, 5), 4), rand((2, 2, 3, 3), 5), rand((2,), 6)]),
    "conv2d_1x1": (lambda x, w, b: ops.conv2d(x, w, b), lambda: [rand((1, 3, 6, 6), 7), rand((2, 3, 1, 1), 8), rand((2,), 9)]),
    "conv2d_k4s2": (lambda x, w: ops.conv2d(x, w, None, 2, 1), lambda: [rand((1, 2, 8, 8), 10), rand((2, 2, 4, 4), 11)]),
    "conv_transpose2d": (lambda x, w, b: ops.conv_transpose2d(x, w, b, 2), lambda: [rand((1, 3, 5, 5), 12), rand((3, 3, 2, 2), 13), rand((3,), 14)]),
    "add": (ops.add, lambda: [rand((4, 30), 15), rand((4, 30), 16)]),
    "sub": (ops.sub, lambda: [rand((4, 30), 17), rand((4, 30), 18)]),
    "mul": (ops.mul, lambda: [rand((4, 30), 19), rand((4, 30), 20)]),
    "div": (ops.div, lambda: [rand((4, 30), 21), _pos((4, 30), 22)]),
    "scale": (lambda t: ops.scale(t, -1.7), lambda: [rand((120,), 23)]),
    "add_scalar": (lambda t: ops.add_scalar(t, 0.3), lambda: [rand((120,), 24)]),
    "leaky_relu": (lambda t: ops.leaky_relu(t, 0.2), lambda: [_away_from_zero((120,), 25)]),
    "relu": (ops.relu, lambda: [_away_from_zero((120,), 26)]),
    "sigmoid": (ops.sigmoid, lambda: [rand((120,), 27, scale=3.0)]),
    "softplus": (ops.softplus, lambda: [rand((120,), 28, scale=3.0)]),
    "power": (lambda t: ops.power(t, 0.3), lambda: [_pos((120,), 29)]),
    "clamp_min": (lambda t: ops.clamp_min(t, 0.0), lambda: [_away_from_zero((120,), 30)]),
    "sum": (ops.sum, lambda: [rand((120,), 31)]),
    "mean": (ops.mean, lambda: [rand((120,), 32)]),
    "abs_mean": (ops.abs_mean, lambda: [rand((120,), 33), rand((120,), 34)]),
    "maxpool2": (ops.maxpool2, lambda: [_distinct((1, 2, 8, 8), 35)]),
    "avgpool2": (ops.avgpool2, lambda: [rand((1, 2, 9, 8), 36)]),
    "concat_channels": (ops.concat_channels, lambda: [rand((1, 2, 5, 5), 37), rand((1, 3, 5, 5), 38)]),
    "depth_to_space2": (ops.depth_to_space2, lambda: [rand((1, 8, 4, 4), 39)]),
    "mul_channels": (ops.mul_channels, lambda: [rand((1, 3, 6, 6), 40), rand((1, 1, 6, 6), 41)]),
    "separable_filter_valid": (
        lambda t: ops.separable_filter_valid(t, [0.25, 0.5, 0.25]),
        lambda: [rand((1, 2, 8, 8), 42)],
    ),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_gradients_match_finite_differences(name):
    fn, make = GRAD_CASES[name]
    inputs = make()
    err, n = check_gradients(fn, inputs, n_coords=100, h=1e-3)
    assert n >= 100
    assert err <= 1e-3, f"{name}: relative error {err:.2e}"


# ------------------------------------------------------------- determinism

def test_rng_determinism_and_state_round_trip():
    a, b = Rng(42), Rng(42)
    np.testing.assert_array_equal(a.normal((5, 5)), b.normal((5, 5)))
    a.uniform(size=3)
    snap = a.state
    first = a.normal((4,))
    again = Rng.from_state(snap).normal((4,))
    np.testing.assert_array_equal(first, again)


def test_rng_substreams_differ():
    assert not np.array_equal(Rng(1, 0).normal((8,)), Rng(1, 1).normal((8,)))


def test_ops_bit_identical_across_runs():
    def run():
        rng = Rng(3)
        x = Tensor(rng.normal((1, 4, 16, 16)), requires_grad=True)
        w = Tensor(rng.normal((8, 4, 3, 3)), requires_grad=True)
        with Tape():
            y = ops.mean(ops.sigmoid(ops.conv2d(x, w, None, 1, 1)))
        backward(y)
        return y.data.copy(), w.grad.copy(), x.grad.copy()

    for u, v in zip(run(), run()):
        assert u.tobytes() == v.tobytes()


# ------------------------------------------------------------------- dump

def test_dump_golden():
    out = ops.conv2d(T([[[[1, 2], [3, 4]]]]), T([[[[1, 0], [0, 1]]]]), T([0.5]), padding=1)
    text = dump(out)
    assert text == (GOLDEN / "conv2d_trace_pad1.txt").read_text()
    np.testing.assert_array_equal(parse_dump(text).data, out.data)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
def test_dump_round_trip(shape, seed):
    t = Tensor(np.random.default_rng(seed).standard_normal(shape).astype(np.float32))
    assert parse_dump(dump(t)).data.tobytes() == t.data.tobytes()


def test_check_finite():
    Tensor([1.0, 2.0]).check_finite()
    with pytest.raises(NonFiniteError):
        Tensor([1.0, math.inf]).check_finite()
