import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from scotlab import tensor as T
from scotlab.tensor import Tensor

from helpers import TOL, gradcheck

rng = np.random.default_rng(0)
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_add_small_vectors():
    assert np.array_equal((Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])).data, [4.0, 6.0])


def test_mul_by_ones_is_identity():
    x = Tensor(rng.standard_normal((3, 4)))
    assert np.array_equal((x * T.ones_like(x)).data, x.data)


def test_gelu_fixes_origin():
    assert T.gelu(Tensor([0.0])).data[0] == 0.0


def test_gelu_keeps_float32():
    assert T.gelu(Tensor(np.ones(3, np.float32))).dtype == np.float32


def test_broadcast_mismatch_names_both_shapes():
    with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(4,\)"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones(4))


def test_dtype_mismatch_rejected():
    with pytest.raises(T.DTypeError):
        Tensor(np.ones(2, np.float32)) + Tensor(np.ones(2, np.float64))


def test_matmul_identity_and_hand_value():
    A = Tensor(rng.standard_normal((3, 3)))
    assert np.array_equal((Tensor(np.eye(3)) @ A).data, A.data)
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_inner_mismatch():
    with pytest.raises(T.ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_sum_gradient_closed_form():
    A, B = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    a, b = Tensor(A, requires_grad=True), Tensor(B, requires_grad=True)
    with T.Tape() as tape:
        ga, gb = tape.gradient((a @ b).sum(), [a, b])
    np.testing.assert_allclose(ga, np.ones((3, 2)) @ B.T, rtol=1e-14)
    np.testing.assert_allclose(gb, A.T @ np.ones((3, 2)), rtol=1e-14)
    assert gradcheck(lambda t: (t[0] @ t[1]).sum(), [A, B]) < TOL


def test_conv_delta_kernel_is_identity():
    x = rng.standard_normal((3, 6, 6))
    k = np.zeros((3, 3, 3, 3))
    for c in range(3):
        k[c, c, 1, 1] = 1.0
    assert np.array_equal(T.conv2d(Tensor(x), Tensor(k)).data, x)
    kd = np.zeros((3, 5, 5))
    kd[:, 2, 2] = 1.0
    assert np.array_equal(T.conv2d(Tensor(x), Tensor(kd), depthwise=True).data, x)


def test_conv_ones_kernel_on_constant_field():
    v = 2.5
    out = T.conv2d(Tensor(np.full((1, 5, 5), v)), Tensor(np.ones((1, 1, 3, 3)))).data[0]
    assert np.allclose(out[1:-1, 1:-1], 9 * v)
    assert np.isclose(out[0, 2], 6 * v) and np.isclose(out[0, 0], 4 * v)


def test_conv_errors():
    with pytest.raises(T.ShapeError):
        T.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))
    with pytest.raises(T.ShapeError):
        T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(T.ShapeError):
        T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((3, 3, 3))), depthwise=True)


@pytest.mark.parametrize("depthwise", [False, True])
def test_conv_gradient(depthwise):
    x = rng.standard_normal((1, 4, 4)) if not depthwise else rng.standard_normal((2, 4, 4))
    k = rng.standard_normal((2, 1, 3, 3)) if not depthwise else rng.standard_normal((2, 3, 3))
    R = rng.standard_normal((2, 4, 4))
    assert gradcheck(lambda t: (T.conv2d(t[0], t[1], depthwise) * Tensor(R)).sum(), [x, k]) < TOL


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3)
    out = T.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out)) and out[0] == 1.0 and out[1] < 1e-300
    R = rng.standard_normal(5)
    assert gradcheck(lambda t: (T.softmax(t[0]) * Tensor(R)).sum(), [rng.standard_normal(5)]) < TOL


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    with T.Tape() as tape:
        (g,) = tape.gradient(x * x, [x])
    assert g == 6.0


def test_backward_layer_norm_matches_differences():
    R = rng.standard_normal((3, 6))
    assert gradcheck(lambda t: (T.layer_norm(t[0]) * Tensor(R)).sum(), [rng.standard_normal((3, 6))]) < TOL


def test_disconnected_parameter_gets_zero():
    x, y = Tensor(np.ones(3), requires_grad=True), Tensor(np.ones((2, 2)), requires_grad=True)
    with T.Tape() as tape:
        gx, gy = tape.gradient((x * 2.0).sum(), [x, y])
    assert np.array_equal(gy, np.zeros((2, 2))) and np.array_equal(gx, [2.0, 2.0, 2.0])


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        y = x * 2.0
        with pytest.raises(T.ShapeError):
            tape.gradient(y, [x])


def test_tape_freed_after_backward():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        tape.gradient((x * x).sum(), [x])
        assert len(tape) == 0


def test_no_recording_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        pass
    (x * 2.0).sum()
    assert len(tape) == 0


OPS = {
    "add_broadcast": (lambda t: t[0] + t[1], [(3, 4), (4,)]),
    "sub": (lambda t: t[0] - t[1], [(3, 4), (3, 1)]),
    "mul": (lambda t: t[0] * t[1], [(2, 3), (2, 3)]),
    "div": (lambda t: t[0] / (t[1] * t[1] + 1.0), [(2, 3), (3,)]),
    "neg": (lambda t: -t[0], [(4,)]),
    "power": (lambda t: (t[0] * t[0] + 1.0) ** 1.5, [(5,)]),
    "exp": (lambda t: T.exp(t[0]), [(5,)]),
    "log": (lambda t: T.log(t[0] * t[0] + 0.5), [(5,)]),
    "sqrt": (lambda t: T.sqrt(t[0] * t[0] + 0.5), [(5,)]),
    "abs": (lambda t: T.tabs(t[0]), [(6,)]),
    "relu": (lambda t: T.relu(t[0]), [(6,)]),
    "gelu": (lambda t: T.gelu(t[0]), [(6,)]),
    "clamp_min": (lambda t: T.clamp_min(t[0], 0.1), [(6,)]),
    "sum_axis": (lambda t: t[0].sum(axis=1, keepdims=True) * t[0], [(3, 4)]),
    "mean": (lambda t: t[0].mean(axis=0) * 3.0, [(3, 4)]),
    "reshape_transpose": (lambda t: t[0].reshape(4, 3).transpose(1, 0) @ t[1], [(3, 4), (4, 2)]),
    "roll": (lambda t: T.roll(t[0], (1, -2), (0, 1)) * t[0], [(3, 5)]),
    "index": (lambda t: t[0][np.array([0, 2, 2]), 1:] * 2.0, [(3, 4)]),
    "concat": (lambda t: T.concat([t[0], t[1]], axis=1), [(2, 3), (2, 2)]),
    "batched_matmul": (lambda t: t[0] @ t[1], [(2, 3, 4), (2, 4, 5)]),
    "l2_normalize": (lambda t: T.l2_normalize(t[0], -1), [(3, 4)]),
    "softmax_axis0": (lambda t: T.softmax(t[0], 0), [(4, 3)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    f, shapes = OPS[name]
    r = np.random.default_rng(len(name))
    inputs = [r.standard_normal(s) for s in shapes]
    if name in ("abs", "relu", "clamp_min"):
        inputs = [np.where(np.abs(x - 0.1) < 0.05, x + 0.3, x) for x in inputs]  # stay off the kinks
    out_shape = f([Tensor(x) for x in inputs]).shape
    R = r.standard_normal(out_shape)
    assert gradcheck(lambda t: (f(t) * Tensor(R)).sum(), inputs) < TOL


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6), elements=finite))
def test_softmax_rows_are_distributions(x):
    y = T.softmax(Tensor(x), -1).data
    assert np.all(y > 0) and np.all(y <= 1)
    np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=finite), hnp.arrays(np.float64, (4,), elements=finite))
def test_broadcast_gradients_match_input_shapes(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    with T.Tape() as tape:
        ga, gb = tape.gradient((ta * tb + tb).sum(), [ta, tb])
    assert ga.shape == a.shape and gb.shape == b.shape
    np.testing.assert_allclose(gb, a.sum(0) + 3.0)


@settings(max_examples=20, deadline=None)
@given(hnp.arrays(np.float64, (2, 5), elements=finite))
def test_ops_are_deterministic(x):
    f = lambda: T.layer_norm(T.gelu(Tensor(x)) @ Tensor(np.ones((5, 5)))).data  # noqa: E731
    assert np.array_equal(f(), f())
