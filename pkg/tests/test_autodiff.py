"""Differentiation engine: forward oracles, hand-derived gradients, tape rules."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physden.autodiff import (
    AdamState,
    NumericalError,
    Tape,
    Tensor,
    adam_step,
    add,
    backward,
    concat,
    conv1d,
    div,
    exclusive_prefix_sum_values,
    mse,
    mul,
    narrow,
    neg,
    prefix_sum_exclusive,
    reduce_mean,
    reduce_sum,
    relu,
    sqrt,
)


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------------------
# Forward oracles


def test_elementwise_forward_values():
    a = Tensor([1.0, -2.0, 3.0])
    b = Tensor([4.0, 5.0, -6.0])
    assert np.array_equal(add(a, b).data, [5.0, 3.0, -3.0])
    assert np.array_equal(mul(a, b).data, [4.0, -10.0, -18.0])
    assert np.array_equal(div(a, b).data, [0.25, -0.4, -0.5])
    assert np.array_equal(neg(a).data, [-1.0, 2.0, -3.0])
    assert np.array_equal(relu(a).data, [1.0, 0.0, 3.0])
    assert np.array_equal(sqrt(Tensor([4.0, 9.0])).data, [2.0, 3.0])


def test_scalar_operand_broadcasts():
    a = Tensor([1.0, 2.0, 3.0])
    assert np.array_equal(add(a, Tensor(1.0)).data, [2.0, 3.0, 4.0])
    assert np.array_equal(mul(a, 2.0).data, [2.0, 4.0, 6.0])


def test_equal_shape_rule_rejects_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError, match="shape mismatch"):
        mse(Tensor([1.0, 2.0]), Tensor([[1.0, 2.0]]))


def test_tensor_rejects_four_dims():
    with pytest.raises(ValueError, match="at most 3 dims"):
        Tensor(np.zeros((2, 2, 2, 2)))


def test_reductions():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert reduce_sum(a).item() == 10.0
    assert reduce_mean(a).item() == 2.5


def test_narrow_and_concat_forward():
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert np.array_equal(narrow(a, 1, 1, 2).data, [[2.0, 3.0], [5.0, 6.0]])
    assert np.array_equal(narrow(a, 0, 0, 1).data, [[1.0, 2.0, 3.0]])
    out = concat([Tensor([[1.0]]), Tensor([[2.0]])], axis=0)
    assert np.array_equal(out.data, [[1.0], [2.0]])
    with pytest.raises(ValueError, match="outside dim"):
        narrow(a, 1, 2, 2)
    with pytest.raises(ValueError, match="incompatible shapes"):
        concat([Tensor([[1.0, 2.0]]), Tensor([[1.0]])], axis=0)


def test_exclusive_prefix_sum_values():
    x = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(exclusive_prefix_sum_values(x), [0.0, 1.0, 3.0])
    assert np.array_equal(prefix_sum_exclusive(Tensor(x)).data, [0.0, 1.0, 3.0])
    two_d = np.array([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
    assert np.array_equal(
        exclusive_prefix_sum_values(two_d), [[0.0, 1.0, 2.0], [0.0, 2.0, 4.0]]
    )


def test_conv1d_forward_oracle():
    # Box kernel over [1, 2, 3] with zero padding: [0+1+2, 1+2+3, 2+3+0].
    x = Tensor([[1.0, 2.0, 3.0]])
    w = Tensor(np.ones((1, 1, 3)))
    b = Tensor(np.zeros(1))
    assert np.array_equal(conv1d(x, w, b).data, [[3.0, 6.0, 5.0]])


def test_conv1d_bias_and_multichannel():
    x = Tensor([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    w = Tensor(np.zeros((2, 3, 1)))
    w.data[0, 0, 0] = 1.0  # out0 copies channel 0
    w.data[1, 2, 0] = 1.0  # out1 copies channel 2
    out = conv1d(x, w, Tensor([10.0, -1.0]))
    assert np.array_equal(out.data, [[11.0, 10.0], [1.0, 1.0]])


def test_conv1d_validation():
    x = Tensor(np.ones((1, 4)))
    with pytest.raises(ValueError, match="odd"):
        conv1d(x, Tensor(np.ones((1, 1, 2))), Tensor(np.zeros(1)))
    with pytest.raises(ValueError, match="channels"):
        conv1d(x, Tensor(np.ones((1, 2, 3))), Tensor(np.zeros(1)))
    with pytest.raises(ValueError, match="bias"):
        conv1d(x, Tensor(np.ones((2, 1, 3))), Tensor(np.zeros(1)))


def test_mse_oracle():
    assert mse(Tensor([0.0, 0.0]), Tensor([3.0, 4.0])).item() == 12.5


# ---------------------------------------------------------------------------
# Hand-derived gradients


def test_backward_of_product_plus_term():
    # loss = sum(x * y + x): dL/dx = y + 1, dL/dy = x.
    x = leaf([1.0, 2.0])
    y = leaf([3.0, 5.0])
    with Tape() as tape:
        loss = reduce_sum(add(mul(x, y), x))
    grads = backward(loss, tape)
    assert np.array_equal(grads[x], [4.0, 6.0])
    assert np.array_equal(grads[y], [1.0, 2.0])


def test_backward_div_and_sqrt():
    x = leaf([4.0])
    y = leaf([2.0])
    with Tape() as tape:
        loss = reduce_sum(add(div(x, y), sqrt(x)))
    grads = backward(loss, tape)
    # d(x/y)/dx = 1/y, d(sqrt x)/dx = 1/(2 sqrt x); d(x/y)/dy = -x/y^2.
    assert np.allclose(grads[x], [0.5 + 0.25])
    assert np.allclose(grads[y], [-1.0])


def test_relu_gradient_zero_at_kink():
    x = leaf([-1.0, 0.0, 2.0])
    with Tape() as tape:
        loss = reduce_sum(relu(x))
    assert np.array_equal(backward(loss, tape)[x], [0.0, 0.0, 1.0])


def test_mse_gradient():
    a = leaf([0.0, 0.0])
    with Tape() as tape:
        loss = mse(a, Tensor([3.0, 4.0]))
    # d mean((a-b)^2) / da = 2 (a - b) / n.
    assert np.array_equal(backward(loss, tape)[a], [-3.0, -4.0])


def test_conv1d_gradients_hand_values():
    # Box kernel, loss = sum(out): grad x counts kernel taps that see each
    # sample, grad w sums the padded input under each tap.
    x = leaf([[1.0, 2.0, 3.0]])
    w = leaf(np.ones((1, 1, 3)))
    b = leaf(np.zeros(1))
    with Tape() as tape:
        loss = reduce_sum(conv1d(x, w, b))
    grads = backward(loss, tape)
    assert np.array_equal(grads[x], [[2.0, 3.0, 2.0]])
    assert np.array_equal(grads[w], [[[3.0, 6.0, 5.0]]])
    assert np.array_equal(grads[b], [3.0])


def test_prefix_sum_gradient_hand_values():
    # out[t] = sum_{s<t} x[s], so dL/dx[s] = sum of upstream weights after s.
    x = leaf([1.0, 2.0, 3.0])
    weights = Tensor([10.0, 20.0, 40.0])
    with Tape() as tape:
        loss = reduce_sum(mul(prefix_sum_exclusive(x), weights))
    assert np.array_equal(backward(loss, tape)[x], [60.0, 40.0, 0.0])


def test_narrow_concat_gradient_routing():
    x = leaf([[1.0, 2.0, 3.0, 4.0]])
    y = leaf([[5.0, 6.0]])
    with Tape() as tape:
        piece = narrow(x, 1, 1, 2)
        loss = reduce_sum(mul(concat([piece, y], axis=1), Tensor([[1.0, 2.0, 3.0, 4.0]])))
    grads = backward(loss, tape)
    assert np.array_equal(grads[x], [[0.0, 1.0, 2.0, 0.0]])
    assert np.array_equal(grads[y], [[3.0, 4.0]])


def test_gradient_accumulates_over_reuse():
    x = leaf([3.0])
    with Tape() as tape:
        loss = reduce_sum(mul(x, x))
    assert np.array_equal(backward(loss, tape)[x], [6.0])


# ---------------------------------------------------------------------------
# Tape semantics


def test_operations_outside_tape_record_nothing():
    x = leaf([1.0])
    tape = Tape()
    with tape:
        pass
    mul(x, x)
    assert tape.nodes == []


def test_constants_are_pruned_from_tape():
    with Tape() as tape:
        mul(Tensor([1.0]), Tensor([2.0]))
    assert tape.nodes == []


def test_backward_requires_scalar_loss():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = mul(x, x)
    with pytest.raises(ValueError, match="scalar"):
        backward(y, tape)


def test_backward_is_pure_in_the_tape():
    x = leaf([2.0])
    with Tape() as tape:
        loss = reduce_sum(mul(x, x))
    first = backward(loss, tape)[x]
    second = backward(loss, tape)[x]
    assert np.array_equal(first, second)


def test_gradient_map_reads_zeros_for_unreached():
    x = leaf([1.0, 2.0])
    unused = leaf([[7.0, 8.0]])
    with Tape() as tape:
        loss = reduce_sum(x)
    grads = backward(loss, tape)
    assert unused not in grads
    assert np.array_equal(grads[unused], np.zeros((1, 2)))


def test_no_grad_leaf_gets_no_entry():
    x = leaf([1.0])
    frozen = Tensor([2.0], requires_grad=False)
    with Tape() as tape:
        loss = reduce_sum(mul(x, frozen))
    grads = backward(loss, tape)
    assert frozen not in grads
    assert np.array_equal(grads[x], [2.0])


def test_nested_tapes_record_independently():
    x = leaf([1.0])
    with Tape() as outer:
        mul(x, x)
        with Tape() as inner:
            loss = reduce_sum(mul(x, x))
        grads = backward(loss, inner)
    assert len(outer.nodes) == 1
    assert len(inner.nodes) == 2
    assert np.array_equal(grads[x], [2.0])


# ---------------------------------------------------------------------------
# Optimizer


def test_adam_first_step_is_bias_corrected():
    p = leaf([0.0])
    state = AdamState.for_params([p])
    with Tape() as tape:
        loss = reduce_sum(mul(p, Tensor([3.0])))
    grads = backward(loss, tape)
    adam_step([p], grads, state, lr=0.01)
    # After bias correction the first step is lr * g / (|g| + eps).
    assert state.t == 1
    assert np.allclose(p.data, [-0.01], atol=1e-9)


def test_adam_converges_on_quadratic():
    p = leaf([5.0])
    state = AdamState.for_params([p])
    for _ in range(400):
        with Tape() as tape:
            loss = reduce_sum(mul(p, p))
        adam_step([p], backward(loss, tape), state, lr=0.05)
    assert abs(p.data[0]) < 1e-2


def test_adam_rejects_non_finite_gradient():
    p = leaf([0.0])
    state = AdamState.for_params([p])
    with Tape() as tape:
        loss = reduce_sum(sqrt(p))  # d sqrt / dx at 0 is infinite
    with np.errstate(divide="ignore"):
        grads = backward(loss, tape)
    with pytest.raises(NumericalError, match="parameter 0 at step 1"):
        adam_step([p], grads, state, lr=0.01)


def test_adam_state_must_match_params():
    p = leaf([0.0])
    state = AdamState.for_params([p, leaf([1.0])])
    with Tape() as tape:
        loss = reduce_sum(p)
    with pytest.raises(ValueError, match="state does not match"):
        adam_step([p], backward(loss, tape), state, lr=0.01)


# ---------------------------------------------------------------------------
# Properties


@given(st.lists(st.integers(-100, 100), min_size=1, max_size=20))
def test_reduce_sum_gradient_is_ones(values):
    x = leaf(np.array(values, dtype=np.float64))
    with Tape() as tape:
        loss = reduce_sum(x)
    assert np.array_equal(backward(loss, tape)[x], np.ones(len(values)))


@given(st.lists(st.integers(-50, 50), min_size=2, max_size=20))
def test_prefix_sum_differences_recover_input(values):
    # Exact for integer-valued floats: consecutive outputs differ by x[t].
    x = np.array(values, dtype=np.float64)
    out = exclusive_prefix_sum_values(x)
    assert out[0] == 0.0
    assert np.array_equal(np.diff(out), x[:-1])


@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=16),
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=16),
)
def test_add_commutes(a_vals, b_vals):
    n = min(len(a_vals), len(b_vals))
    a = Tensor(np.array(a_vals[:n]))
    b = Tensor(np.array(b_vals[:n]))
    assert np.array_equal(add(a, b).data, add(b, a).data)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(3, 9, ).filter(lambda k: k % 2 == 1))
def test_conv1d_matches_direct_summation(seed, k):
    rng = np.random.default_rng(seed)
    cin, cout, t_len = 2, 3, 8
    x = rng.normal(size=(cin, t_len))
    w = rng.normal(size=(cout, cin, k))
    b = rng.normal(size=cout)
    out = conv1d(Tensor(x), Tensor(w), Tensor(b)).data
    pad = (k - 1) // 2
    xpad = np.zeros((cin, t_len + k - 1))
    xpad[:, pad:pad + t_len] = x
    expected = np.empty((cout, t_len))
    for o in range(cout):
        for t in range(t_len):
            expected[o, t] = b[o] + sum(
                w[o, i, j] * xpad[i, t + j] for i in range(cin) for j in range(k)
            )
    assert np.allclose(out, expected, rtol=1e-12, atol=1e-12)
