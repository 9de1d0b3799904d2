import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from numpy.testing import assert_allclose, assert_array_equal

from ufrec.engine import (
    ParameterStore,
    ShapeError,
    Tensor,
    adam_step,
    backward,
    concat,
    embedding,
    finite_diff_check,
    layer_norm,
    load_arrays,
    log_softmax,
    masked_softmax,
    matmul,
    mse,
    no_grad,
    relu,
    save_arrays,
    square,
)

floats = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def test_softmax_of_zeros_is_uniform():
    y = masked_softmax(Tensor(np.zeros(3)))
    assert_allclose(y.data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_matmul_identity_and_hand_values():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert_array_equal(matmul(a, Tensor(np.eye(2))).data, a.data)
    assert_array_equal(matmul(a, Tensor([[5.0], [6.0]])).data, [[17.0], [39.0]])


def test_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert "(2, 3)" in str(exc.value)
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_sum_gradient_is_ones():
    x = Tensor(np.array([1.0, -2.0, 5.0]), requires_grad=True)
    backward(x.sum())
    assert_array_equal(x.grad, [1.0, 1.0, 1.0])


def test_mse_of_self_has_zero_gradient():
    x = Tensor(np.array([0.3, -1.0]), requires_grad=True)
    backward(mse(x, x))
    assert_array_equal(x.grad, [0.0, 0.0])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_gradients_accumulate_without_zeroing():
    x = Tensor(np.array([2.0]), requires_grad=True)
    backward(square(x).sum())
    backward(square(x).sum())
    assert_array_equal(x.grad, [8.0])


def test_no_grad_builds_no_tape():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad


@given(hnp.arrays(np.float64, (4, 5), elements=floats), hnp.arrays(bool, (4, 5)))
def test_masked_softmax_rows(x, mask):
    y = masked_softmax(Tensor(x), mask).data
    assert (y[~mask] == 0.0).all()
    sums = y.sum(axis=-1)
    has = mask.any(axis=-1)
    assert_allclose(sums[has], 1.0, rtol=0, atol=1e-12)
    assert (sums[~has] == 0.0).all()


@given(hnp.arrays(np.float64, (3, 6), elements=floats))
def test_log_softmax_matches_log_of_softmax(x):
    assert_allclose(log_softmax(Tensor(x)).data, np.log(masked_softmax(Tensor(x)).data), atol=1e-12)


def test_embedding_masked_rows_are_zero_and_get_no_gradient():
    store = ParameterStore()
    table = store.add("t", np.arange(12.0).reshape(4, 3))
    out = embedding(table, np.array([[0, 2], [3, 3]]), np.array([[False, True], [True, True]]))
    assert_array_equal(out.data[0, 0], 0.0)
    backward(out.sum())
    assert_array_equal(table.grad[0], 0.0)
    assert_array_equal(table.grad[3], 2.0)


def test_adam_first_step_moves_by_lr():
    store = ParameterStore()
    p = store.add("w", np.array([1.0]))
    p.grad = np.array([1.0])
    adam_step(store, 0.01)
    # m_hat = g, v_hat = g^2  ->  step = lr * 1 / (1 + eps)
    assert_allclose(p.data, [1.0 - 0.01 / (1.0 + 1e-8)], rtol=0, atol=1e-15)
    assert p.grad is None and store.step == 1


def test_adam_zero_gradient_is_fixed_point():
    store = ParameterStore()
    p = store.add("w", np.array([0.5, -0.25]))
    p.grad = np.zeros(2)
    adam_step(store, 0.1)
    assert_array_equal(p.data, [0.5, -0.25])


def _toy_loss(store):
    x = Tensor(np.array([[0.3, -0.7, 1.1], [0.2, 0.5, -0.4]]))
    h = relu(matmul(x, store["w1"]) + store["b1"])
    z = concat([h, matmul(h, store["w2"])], axis=-1)
    z = layer_norm(z, store["g"], store["b"])
    return square(z).mean() + log_softmax(z)[..., 0].mean() * -1.0


def _toy_store(seed=0):
    rng = np.random.default_rng(seed)
    s = ParameterStore()
    s.add("w1", rng.normal(size=(3, 4)))
    s.add("b1", rng.normal(size=4) * 0.1 + 0.5)
    s.add("w2", rng.normal(size=(4, 2)))
    s.add("g", rng.normal(size=6))
    s.add("b", rng.normal(size=6))
    return s


def test_finite_diff_on_composite_graph():
    assert finite_diff_check(_toy_loss, _toy_store()) <= 1e-6


def test_finite_diff_quadratic_and_constant():
    s = ParameterStore()
    s.add("x", np.array([0.4, -1.3, 2.0]))
    assert finite_diff_check(lambda st_: square(st_["x"]).sum() * 3.0, s) <= 1e-8
    assert finite_diff_check(lambda st_: st_["x"].sum() * 0.0, s) == 0.0


def test_finite_diff_rejects_bad_eps_and_nan():
    s = ParameterStore()
    s.add("x", np.array([1.0]))
    with pytest.raises(ValueError):
        finite_diff_check(lambda st_: st_["x"].sum(), s, eps=1e-2)
    with pytest.raises(FloatingPointError):
        finite_diff_check(lambda st_: st_["x"].sum() * np.nan, s)


def test_two_runs_are_bitwise_identical():
    finals = []
    for _ in range(2):
        s = _toy_store(3)
        for _ in range(5):
            s.zero_grad()
            backward(_toy_loss(s))
            adam_step(s, 0.05)
        finals.append({k: v.data.copy() for k, v in s.items()})
    for k in finals[0]:
        assert_array_equal(finals[0][k], finals[1][k])


def test_duplicate_parameter_name():
    s = ParameterStore()
    s.add("a", [1.0])
    with pytest.raises(KeyError):
        s.add("a", [2.0])


def test_checkpoint_round_trip(tmp_path, rng):
    arrays = {"b": rng.normal(size=(2, 3)), "a": rng.normal(size=5), "s": np.array(2.5)}
    path = tmp_path / "x.ckpt"
    save_arrays(path, arrays, step=7, seed=11, meta={"k": "v"})
    back, header = load_arrays(path)
    assert header["step"] == 7 and header["seed"] == 11 and header["meta"] == {"k": "v"}
    assert header["names"] == ["a", "b", "s"]
    for k in arrays:
        assert_array_equal(back[k], arrays[k])
    raw = path.read_bytes()
    n = int.from_bytes(raw[:8], "little")
    payload = raw[8 + n:]
    assert_array_equal(np.frombuffer(payload[:40], "<f8"), arrays["a"])


def test_checkpoint_truncation_detected(tmp_path):
    path = tmp_path / "x.ckpt"
    save_arrays(path, {"a": np.ones(4)})
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_arrays(path)
