import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srvp.tensor import (
    NumericalError,
    ShapeError,
    Tensor,
    concat,
    gate_blend,
    l2_normalize,
    matmul,
    no_grad,
    softmax,
)
from srvp.gradcheck import gradcheck, registered_ops, run_suite

from oracles import matmul_loops


def rand(shape, seed=0, scale=1.0):
    return np.random.default_rng(seed).standard_normal(shape) * scale


# -- matmul -------------------------------------------------------------------


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = matmul(Tensor(np.eye(2)), Tensor(a))
    assert np.array_equal(out.data, a)


def test_matmul_hand():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.shape == (1, 1)
    assert out.data[0, 0] == 11.0


def test_matmul_vs_loop_oracle():
    a, b = rand((3, 4), 1), rand((4, 2), 2)
    out = matmul(Tensor(a), Tensor(b))
    assert np.abs(out.data - matmul_loops(a, b)).max() <= 1e-12


@settings(max_examples=25, deadline=None)
@given(
    p=st.integers(1, 8), q=st.integers(1, 8), r=st.integers(1, 8),
    seed=st.integers(0, 10_000),
)
def test_matmul_matches_loops_property(p, q, r, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((p, q)), rng.standard_normal((q, r))
    out = matmul(Tensor(a), Tensor(b))
    assert np.abs(out.data - matmul_loops(a, b)).max() <= 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(rand((2, 3))), Tensor(rand((2, 3))))


# -- softmax ------------------------------------------------------------------


def test_softmax_symmetry():
    out = softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_single_element_axis():
    out = softmax(Tensor([[5.0], [-2.0]]), axis=1)
    assert np.array_equal(out.data, [[1.0], [1.0]])


def test_softmax_large_logits_stable():
    out = softmax(Tensor([1000.0, 0.0]), axis=0)
    assert abs(out.data[0] - 1.0) <= 1e-12
    assert abs(out.data[1]) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 1e3))
def test_softmax_slices_sum_to_one(seed, scale):
    x = np.random.default_rng(seed).standard_normal((4, 5)) * scale
    out = softmax(Tensor(x), axis=1)
    assert np.abs(out.data.sum(axis=1) - 1.0).max() <= 1e-9
    # extreme logit gaps underflow to exactly 0, as in the [1000, 0] case
    assert ((out.data >= 0) & (out.data <= 1 + 1e-12)).all()


def test_softmax_moderate_inputs_strictly_inside_unit_interval():
    x = np.random.default_rng(5).standard_normal((4, 5)) * 3.0
    out = softmax(Tensor(x), axis=1)
    assert ((out.data > 0) & (out.data < 1)).all()


def test_softmax_bad_axis():
    with pytest.raises(ShapeError):
        softmax(Tensor([1.0, 2.0]), axis=3)


# -- l2_normalize --------------------------------------------------------------


def test_l2_normalize_345_triangle():
    out = l2_normalize(Tensor([3.0, 4.0]), axis=0)
    assert np.allclose(out.data, [0.6, 0.8], atol=1e-15)


def test_l2_normalize_zero_slice_unchanged():
    out = l2_normalize(Tensor([0.0, 0.0]), axis=0)
    assert np.array_equal(out.data, [0.0, 0.0])


def test_l2_normalize_row_norms():
    out = l2_normalize(Tensor(rand((4, 5), 3)), axis=1)
    norms = np.sqrt((out.data**2).sum(axis=1))
    assert np.abs(norms - 1.0).max() <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_l2_normalize_idempotent(seed):
    x = np.random.default_rng(seed).standard_normal((3, 6))
    once = l2_normalize(Tensor(x), axis=1)
    twice = l2_normalize(once, axis=1)
    assert np.abs(twice.data - once.data).max() <= 1e-12


# -- elementwise ----------------------------------------------------------------


def test_elementwise_values():
    assert Tensor([0.0]).sigmoid().data[0] == 0.5
    assert Tensor([0.0]).tanh().data[0] == 0.0
    assert Tensor([-1.0]).relu().data[0] == 0.0
    had = Tensor([1.0, 2.0]) * Tensor([3.0, 4.0])
    assert np.array_equal(had.data, [3.0, 8.0])


def test_elementwise_shape_mismatch():
    for op in (lambda a, b: a + b, lambda a, b: a - b, lambda a, b: a * b, lambda a, b: a / b):
        with pytest.raises(ShapeError):
            op(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_no_scalar_add_broadcast():
    with pytest.raises(ShapeError):
        Tensor([1.0]) + 1.0
    # scalar multiply is the one allowed broadcast
    assert (Tensor([2.0]) * 3.0).data[0] == 6.0


# -- concat ----------------------------------------------------------------------


def test_concat_shape_arithmetic():
    a, b = Tensor(rand((3, 10), 1)), Tensor(rand((3, 10), 2))
    assert concat([a, b], axis=0).shape == (6, 10)


def test_concat_single_identity():
    a = Tensor(rand((2, 3), 4))
    assert np.array_equal(concat([a], axis=0).data, a.data)


def test_concat_slice_back_roundtrip():
    a, b = rand((2, 5), 5), rand((3, 5), 6)
    joined = concat([Tensor(a), Tensor(b)], axis=0)
    assert np.array_equal(joined.data[:2], a)
    assert np.array_equal(joined.data[2:], b)


def test_concat_incompatible():
    with pytest.raises(ShapeError):
        concat([Tensor(rand((2, 5))), Tensor(rand((2, 6)))], axis=0)


# -- backward ---------------------------------------------------------------------


def test_backward_product_rule():
    x, y = Tensor([2.0], requires_grad=True), Tensor([3.0], requires_grad=True)
    (x * y).sum().backward()
    assert x.grad[0] == 3.0 and y.grad[0] == 2.0


def test_backward_sigmoid_at_zero():
    x = Tensor(np.zeros(5), requires_grad=True)
    x.sigmoid().sum().backward()
    assert np.allclose(x.grad, 0.25, atol=1e-15)


def test_backward_fanout_accumulates():
    x = Tensor([1.5], requires_grad=True)
    (x + x).sum().backward()
    assert x.grad[0] == 2.0


def test_backward_requires_scalar_root():
    x = Tensor(rand((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x.sigmoid()
    assert y._backward_fn is None and not y.requires_grad


# -- finiteness guards ---------------------------------------------------------------


def test_division_by_zero_raises():
    with pytest.raises(NumericalError, match="div"):
        Tensor([1.0]) / Tensor([0.0])


def test_log_of_zero_raises():
    with pytest.raises(NumericalError, match="log"):
        Tensor([0.0]).log()


def test_sqrt_of_negative_raises():
    with pytest.raises(NumericalError, match="sqrt"):
        Tensor([-1.0]).sqrt()


def test_nonfinite_leaf_rejected():
    with pytest.raises(NumericalError):
        Tensor([np.inf])


def test_shape_data_invariant():
    t = Tensor(rand((3, 4, 5)))
    assert int(np.prod(t.shape)) == t.size == t.data.size
    assert t.data.flags["C_CONTIGUOUS"]


# -- gate blend -----------------------------------------------------------------------


def test_gate_blend_extremes_exact():
    g = Tensor(rand((3, 3), 7))
    h = Tensor(rand((3, 3), 8))
    assert np.array_equal(gate_blend(Tensor(np.ones((3, 3))), g, h).data, h.data)
    assert np.array_equal(gate_blend(Tensor(np.zeros((3, 3))), g, h).data, g.data)


# -- gradcheck -------------------------------------------------------------------------


def test_gradcheck_quadratic():
    x = Tensor(rand((4, 3), 9))
    err = gradcheck(lambda t: (t * t).sum(), [x])
    assert err < 1e-9


def test_gradcheck_softmax_matmul_chain():
    a = Tensor(rand((3, 4), 10))
    b = Tensor(rand((4, 3), 11))
    w = Tensor(rand((3, 3), 12))

    def fn(x, y):
        return (softmax(matmul(x, y), axis=1) * w).sum()

    assert gradcheck(fn, [a, b]) < 1e-6


def test_every_registered_op_passes_gradcheck():
    results = run_suite(include_end_to_end=False)
    for name, err, passed in results:
        assert passed, f"{name} gradcheck error {err:.3e} >= 1e-4"


def test_registry_lists_each_op_once():
    names = registered_ops()
    assert len(names) == len(set(names))
    core = {"matmul", "softmax", "l2_normalize", "sigmoid", "tanh", "relu",
            "hadamard", "add", "sub", "scale", "concat", "conv2d",
            "channel_linear", "batchnorm2d", "layernorm", "convgru_cell"}
    assert core <= set(names)


def test_gradcheck_detects_corruption():
    results = run_suite(include_end_to_end=False, corrupt="tanh")
    by_name = {name: passed for name, _, passed in results}
    assert not by_name["tanh"]
