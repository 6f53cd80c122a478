import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resfftgan import tensor as T
from resfftgan.tensor import Parameter, ShapeError, Tensor

from oracles import check_gradients, loop_conv2d, naive_matmul

rng = np.random.default_rng(7)


def leaf(*shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def away_from_zero(*shape):
    x = rng.standard_normal(shape)
    return Tensor(np.where(np.abs(x) < 0.1, 0.3, x), requires_grad=True)


# ----------------------------------------------------------------- examples
def test_add_example():
    np.testing.assert_array_equal((Tensor([1, 2]) + Tensor([3, 4])).data, [4, 6])


def test_mul_by_zero_annihilates():
    x = Tensor(rng.standard_normal((3, 4)))
    out = T.mul(x, 0)
    assert out.shape == (3, 4) and not out.data.any()


def test_elementwise_against_loop():
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    got = {"add": T.add(a, b), "sub": T.sub(a, b), "mul": T.mul(a, b), "div": T.div(a, b)}
    for i in range(3):
        for j in range(4):
            assert got["add"].data[i, j] == a[i, j] + b[i, j]
            assert got["sub"].data[i, j] == a[i, j] - b[i, j]
            assert got["mul"].data[i, j] == a[i, j] * b[i, j]
            assert got["div"].data[i, j] == a[i, j] / b[i, j]


def test_broadcast_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        T.add(np.ones((2, 3)), np.ones(4))


def test_matmul_examples():
    A = rng.standard_normal((3, 3))
    np.testing.assert_allclose(T.matmul(np.eye(3), A).data, A, atol=0)
    np.testing.assert_array_equal(T.matmul([[1, 2], [3, 4]], [[1], [1]]).data, [[3], [7]])
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    np.testing.assert_allclose(T.matmul(a, b).data, naive_matmul(a, b), atol=1e-12)


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_conv_identity_kernel():
    x = rng.standard_normal((2, 1, 5, 5))
    np.testing.assert_array_equal(T.conv2d(x, np.ones((1, 1, 1, 1))).data, x)


def test_conv_all_ones():
    out = T.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)))
    assert out.shape == (1, 1, 1, 1) and out.data.item() == 9.0


@pytest.mark.parametrize("stride,pad,mode", [(1, 0, "zeros"), (1, 1, "zeros"), (2, 1, "zeros"),
                                              (1, 1, "edge"), (1, 2, "edge")])
def test_conv_against_loop(stride, pad, mode):
    size = 7 if stride == 2 else 6
    x = rng.standard_normal((2, 3, size, size))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    got = T.conv2d(x, w, b, stride=stride, pad=pad, pad_mode=mode).data
    np.testing.assert_allclose(got, loop_conv2d(x, w, b, stride, pad, mode), atol=1e-12)


def test_conv_rejects_bad_geometry():
    with pytest.raises(ShapeError, match="non-integral"):
        T.conv2d(np.ones((1, 1, 8, 8)), np.ones((1, 1, 3, 3)), stride=2, pad=1)
    with pytest.raises(ShapeError, match="odd"):
        T.conv2d(np.ones((1, 1, 8, 8)), np.ones((1, 1, 2, 2)))
    with pytest.raises(ShapeError, match="channel"):
        T.conv2d(np.ones((1, 2, 8, 8)), np.ones((1, 3, 3, 3)))


def test_relu_examples():
    np.testing.assert_array_equal(T.relu([-1.0, 2.0]).data, [0, 2])
    assert not T.relu(-np.abs(rng.standard_normal(5)) - 0.1).data.any()
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    T.relu(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0, 0, 1])


def test_leaky_relu_slope():
    x = Tensor([-2.0, 3.0], requires_grad=True)
    y = T.leaky_relu(x)
    np.testing.assert_allclose(y.data, [-0.4, 3.0])
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [0.2, 1.0])


def test_backward_quadratic_and_dead_unit():
    x = leaf(4)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)
    z = Tensor(np.abs(rng.standard_normal(4)) + 0.1, requires_grad=True)
    T.relu(-z).sum().backward()
    assert not z.grad.any()


def test_backward_needs_scalar():
    with pytest.raises(ShapeError):
        leaf(3).backward()


def test_shared_subexpression_accumulates():
    x = leaf(3)
    y = T.exp(x)
    (y * y + y).sum().backward()
    shared = x.grad.copy()
    x2 = Tensor(x.data, requires_grad=True)
    (T.exp(x2) * T.exp(x2) + T.exp(x2)).sum().backward()
    np.testing.assert_allclose(shared, x2.grad, rtol=1e-13)


def test_softmax_sums_to_one_over_classes():
    p = T.softmax(rng.standard_normal((2, 8, 3, 3)), axis=1).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_upsample_then_pool_roundtrip():
    x = rng.standard_normal((1, 2, 4, 4))
    np.testing.assert_allclose(T.avgpool(T.upsample2x(x), 2).data, x, atol=1e-15)


def test_avgpool_rejects_odd():
    with pytest.raises(ShapeError):
        T.avgpool(np.ones((1, 1, 5, 4)), 2)


def test_concat_matches_numpy():
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 1, 4))
    np.testing.assert_array_equal(T.concat([a, b], axis=1).data, np.concatenate([a, b], axis=1))


def test_parameter_is_named_learnable_tensor():
    p = Parameter(np.zeros((2, 2)), name="net.w")
    assert p.requires_grad and p.learnable and p.value is p and p.name == "net.w"
    frozen = Parameter(np.zeros(2), learnable=False)
    assert not frozen.requires_grad


# ------------------------------------------------------- gradient checks
UNARY = {
    "neg": lambda a: -a,
    "square": T.square,
    "sqrt": lambda a: T.sqrt(T.tabs(a) + 0.5),
    "exp": T.exp,
    "log": lambda a: T.log(T.tabs(a) + 0.5),
    "abs": T.tabs,
    "tanh": T.tanh,
    "relu": T.relu,
    "leaky_relu": T.leaky_relu,
    "power": lambda a: T.power(T.tabs(a) + 0.5, 1.7),
    "scale": lambda a: T.scale(a, -2.5),
    "sum_axis": lambda a: T.tsum(a, axis=1),
    "mean_axis": lambda a: T.mean(a, axis=(0, 2), keepdims=True),
    "logsumexp": lambda a: T.logsumexp(a, axis=1),
    "softmax": lambda a: T.softmax(a, axis=1),
    "log_softmax": lambda a: T.log_softmax(a, axis=1),
    "reshape": lambda a: T.reshape(a, (4, -1)),
    "transpose": lambda a: T.transpose(a, (2, 0, 1)),
    "getitem": lambda a: a[:, 1:, ::2],
    "upsample": lambda a: T.upsample2x(a),
    "avgpool": lambda a: T.avgpool(T.reshape(a, (1, 2, 4, 3))[..., :2], 2),
    "pad_zeros": lambda a: T.pad2d(a, 1),
    "pad_edge": lambda a: T.pad2d(a, 2, "edge"),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    x = away_from_zero(2, 4, 3)
    weights = None

    def loss():
        nonlocal weights
        y = UNARY[name](x)
        if weights is None:
            weights = np.random.default_rng(1).standard_normal(y.shape)
        return (y * weights).sum()

    assert check_gradients(loss, [x]) < 1e-4


BINARY = {
    "add_broadcast": (lambda a, b: a + b, (3, 4), (4,)),
    "sub": (lambda a, b: a - b, (3, 4), (3, 1)),
    "mul_broadcast": (lambda a, b: a * b, (2, 3, 4), (3, 1)),
    "div": (lambda a, b: a / (T.tabs(b) + 0.5), (3, 4), (3, 4)),
    "matmul": (T.matmul, (3, 5), (5, 2)),
    "matmul_batched": (T.matmul, (2, 3, 5), (5, 4)),
    "concat": (lambda a, b: T.concat([a, b], axis=1), (2, 3, 2), (2, 1, 2)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients(name):
    fn, sa, sb = BINARY[name]
    a, b = away_from_zero(*sa), away_from_zero(*sb)
    weights = None

    def loss():
        nonlocal weights
        y = fn(a, b)
        if weights is None:
            weights = np.random.default_rng(2).standard_normal(y.shape)
        return (y * weights).sum()

    assert check_gradients(loss, [a, b]) < 1e-4


@pytest.mark.parametrize("stride,pad,mode,k", [(1, 1, "zeros", 3), (2, 1, "zeros", 3),
                                                (1, 1, "edge", 3), (1, 0, "zeros", 1),
                                                (1, 2, "zeros", 5)])
def test_conv_gradients(stride, pad, mode, k):
    size = 5 if stride == 2 else 4
    x, w, b = leaf(2, 3, size, size), leaf(2, 3, k, k), leaf(2)
    weights = None

    def loss():
        nonlocal weights
        y = T.conv2d(x, w, b, stride=stride, pad=pad, pad_mode=mode)
        if weights is None:
            weights = np.random.default_rng(3).standard_normal(y.shape)
        return (y * weights).sum()

    assert check_gradients(loss, [x, w, b]) < 1e-4


# ------------------------------------------------------------- properties
small = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
               elements=st.floats(-1e3, 1e3, allow_nan=False))


@given(small)
def test_add_mul_commute(a):
    b = np.flip(a)
    np.testing.assert_array_equal(T.add(a, b).data, T.add(b, a).data)
    np.testing.assert_array_equal(T.mul(a, b).data, T.mul(b, a).data)


@given(small)
def test_matmul_identity_associates(a):
    i_left, i_right = np.eye(a.shape[0]), np.eye(a.shape[1])
    left = T.matmul(T.matmul(i_left, a), i_right).data
    right = T.matmul(i_left, T.matmul(a, i_right)).data
    np.testing.assert_array_equal(left, a)
    np.testing.assert_array_equal(right, a)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 6))
def test_identity_1x1_conv_is_identity(b, c, size):
    x = np.random.default_rng(size).standard_normal((b, c, size, size))
    np.testing.assert_array_equal(T.conv2d(x, np.eye(c).reshape(c, c, 1, 1)).data, x)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_data_grad_lengths_match(values):
    x = Tensor(values, requires_grad=True)
    (T.tanh(x) * x).sum().backward()
    assert x.grad.shape == x.data.shape
    assert x.data.size == int(np.prod(x.shape))
