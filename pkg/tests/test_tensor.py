import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from momakd import tensor as T
from momakd.errors import ContractError, DegenerateInputError, DimensionError

from conftest import fd_check

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_matmul_identity_and_zero():
    out = T.matmul(T.Tensor([[1, 0], [0, 1]]), T.Tensor([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.values, [[3, 4], [5, 6]])
    out = T.matmul(T.Tensor([[1, 2]]), T.Tensor([[0], [0]]))
    np.testing.assert_array_equal(out.values, [[0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))


@pytest.mark.parametrize("seed", range(5))
def test_matmul_gradient(seed):
    rng = np.random.default_rng(seed)
    a = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = T.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    w = T.Tensor(rng.standard_normal((3, 2)))
    assert fd_check(lambda: T.sum_all(T.mul(T.matmul(a, b), w)), [a, b]) < 1e-6


def test_softmax_uniform_and_reference_row():
    np.testing.assert_allclose(T.softmax_rows(T.Tensor([[0.0, 0, 0]])).values, [[1 / 3] * 3], atol=1e-15)
    # reference: e^x / sum e^x evaluated directly
    x = np.array([1.0, 2.0, 3.0])
    ref = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(ref, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)
    np.testing.assert_allclose(T.softmax_rows(T.Tensor([x])).values[0], ref, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    y = T.softmax_rows(T.Tensor(x)).values
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(T.softmax_rows(T.Tensor(x + c)).values, y, atol=1e-12)


def test_softmax_extreme_logits_stay_finite():
    y = T.softmax_rows(T.Tensor([[1000.0, -1000.0, 0.0]])).values
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [[1, 0, 0]], atol=1e-300)


@pytest.mark.parametrize("seed", range(3))
def test_softmax_and_log_softmax_gradients(seed):
    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    w = T.Tensor(rng.standard_normal((4, 5)))
    assert fd_check(lambda: T.sum_all(T.mul(T.softmax_rows(x), w)), [x]) < 1e-6
    assert fd_check(lambda: T.sum_all(T.mul(T.log_softmax_rows(x), w)), [x]) < 1e-6


def test_relu_cases_and_idempotence():
    x = T.Tensor([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(T.relu(x).values, [0, 0, 2])
    np.testing.assert_array_equal(T.relu(T.relu(x)).values, T.relu(x).values)


def test_relu_subgradient_at_zero_is_zero():
    x = T.Tensor([0.0, 1.0], requires_grad=True)
    with T.Tape() as tape:
        loss = T.sum_all(T.relu(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_relu_gradient_away_from_kink(rng):
    v = rng.standard_normal((4, 6))
    v[np.abs(v) < 1e-3] = 0.5
    x = T.Tensor(v, requires_grad=True)
    w = T.Tensor(rng.standard_normal((4, 6)))
    assert fd_check(lambda: T.sum_all(T.mul(T.relu(x), w)), [x]) < 1e-6


def test_l2_normalize_examples():
    np.testing.assert_allclose(T.l2_normalize_rows(T.Tensor([[3.0, 4.0]])).values, [[0.6, 0.8]], atol=1e-15)
    u = np.array([[0.6, 0.8], [1.0, 0.0]])
    np.testing.assert_allclose(T.l2_normalize_rows(T.Tensor(u)).values, u, atol=1e-15)


def test_l2_normalize_zero_row_names_index():
    with pytest.raises(DegenerateInputError, match="row 1"):
        T.l2_normalize_rows(T.Tensor([[1.0, 0.0], [0.0, 0.0]]))


def test_l2_normalize_unit_norm_and_gradient(rng):
    x = T.Tensor(rng.standard_normal((4, 8)), requires_grad=True)
    np.testing.assert_allclose(np.linalg.norm(T.l2_normalize_rows(x).values, axis=1), 1.0, atol=1e-10)
    w = T.Tensor(rng.standard_normal((4, 8)))
    assert fd_check(lambda: T.sum_all(T.mul(T.l2_normalize_rows(x), w)), [x]) < 1e-6


def test_backward_linear_functional_and_zero(rng):
    x = T.Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    with T.Tape() as tape:
        loss = T.sum_all(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))
    with T.Tape() as tape:
        loss = T.scale(T.sum_all(T.softmax_rows(x)), 0.0)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.zeros((3, 2)))


def test_backward_fan_out_sums_contributions(rng):
    x = T.Tensor(rng.standard_normal((2, 3)), requires_grad=True)

    def grad_of(fn):
        with T.Tape() as tape:
            loss = fn()
        tape.backward(loss)
        return x.grad.copy()

    f = lambda: T.sum_all(T.mul(x, x))
    g = lambda: T.sum_all(T.softmax_rows(x))
    both = grad_of(lambda: T.add(f(), g()))
    np.testing.assert_allclose(both, grad_of(f) + grad_of(g), atol=1e-14)


def test_backward_contract_errors(rng):
    x = T.Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    with T.Tape() as tape:
        y = T.mul(x, x)
    with pytest.raises(ContractError, match="scalar"):
        tape.backward(y)
    with T.Tape() as tape:
        loss = T.sum_all(x)
    tape.backward(loss)
    with pytest.raises(ContractError, match="reused"):
        tape.backward(loss)
    with pytest.raises(ContractError):
        with tape:
            pass


def test_loss_from_other_tape_rejected(rng):
    x = T.Tensor(rng.standard_normal(3), requires_grad=True)
    with T.Tape():
        loss = T.sum_all(x)
    with pytest.raises(ContractError, match="not produced"):
        T.Tape().backward(loss)


def test_no_grad_records_nothing(rng):
    x = T.Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    with T.Tape() as tape:
        with T.no_grad():
            y = T.mul(x, x)
    assert len(tape) == 0 and not y.requires_grad


@pytest.mark.parametrize("seed", range(3))
def test_structural_op_gradients(seed):
    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    b = T.Tensor(rng.standard_normal(6), requires_grad=True)
    w = T.Tensor(rng.standard_normal((3, 5)))

    def loss():
        y = T.add_bias(x, b)
        parts = T.concat_cols([T.slice_cols(y, 0, 2), T.slice_cols(y, 4, 6), T.sum_rows(y)])
        s = T.sub(T.mul(parts, w), T.scale(parts, 0.5))
        return T.add(T.mean_all(T.transpose(s)), T.sum_all(T.pick(y, [0, 5, 2])))

    assert fd_check(loss, [x, b]) < 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_multi_head_attention_op_gradient(seed):
    rng = np.random.default_rng(seed)
    q, k, v = (T.Tensor(rng.standard_normal((5, 8)), requires_grad=True) for _ in range(3))
    w = T.Tensor(rng.standard_normal((5, 8)))
    assert fd_check(lambda: T.sum_all(T.mul(T.multi_head_attention(q, k, v, 4)[0], w)), [q, k, v]) < 1e-6


def test_forward_determinism(rng):
    a = rng.standard_normal((6, 5))
    b = rng.standard_normal((5, 4))
    y1 = T.softmax_rows(T.matmul(T.Tensor(a), T.Tensor(b))).values
    y2 = T.softmax_rows(T.matmul(T.Tensor(a), T.Tensor(b))).values
    assert y1.tobytes() == y2.tobytes()


def test_shape_errors():
    with pytest.raises(DimensionError):
        T.add(T.Tensor(np.zeros(2)), T.Tensor(np.zeros(3)))
    with pytest.raises(DimensionError):
        T.add_bias(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros(2)))
    with pytest.raises(DimensionError):
        T.slice_cols(T.Tensor(np.zeros((2, 3))), 2, 5)
