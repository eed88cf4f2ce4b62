import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoproxy import autodiff as ad
from geoproxy.nn import Mlp
from geoproxy.optim import AdamW, ParameterGroup


def finite_difference(loss_fn, param: ad.Tensor, h: float = 1e-6) -> np.ndarray:
    fd = np.zeros_like(param.data)
    it = np.nditer(param.data, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = param.data[i]
        param.data[i] = old + h
        up = loss_fn()
        param.data[i] = old - h
        down = loss_fn()
        param.data[i] = old
        fd[i] = (up - down) / (2.0 * h)
    return fd


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def test_matmul_hand_case():
    out = ad.matmul(ad.constant([[1.0, 2.0]]), ad.constant([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_concat_vector_order():
    a = ad.constant(np.arange(4.0)[None, :])
    b = ad.constant(np.arange(8.0)[None, :] + 100.0)
    out = ad.concat([a, b], axis=1)
    assert out.shape == (1, 12)
    assert np.array_equal(out.data[0, :4], np.arange(4.0))
    assert np.array_equal(out.data[0, 4:], np.arange(8.0) + 100.0)


def test_mse_of_equal_tensors_is_zero():
    x = ad.constant(np.linspace(-2, 2, 12).reshape(3, 4))
    assert float(ad.mean_squared_error(x, ad.constant(x.data.copy())).data) == 0.0


def test_square_gradient_hand_case():
    x = ad.parameter([[3.0]])
    ad.backward(ad.sum_all(ad.square(x)))
    assert x.grad[0, 0] == 6.0


def test_linear_regression_gradient_matches_fd():
    rng = np.random.default_rng(3)
    w = ad.parameter(rng.normal(size=(1, 1)), name="w")
    x = rng.normal(size=(6, 1))
    y = rng.normal(size=(6, 1))

    def loss_value():
        return float(np.mean((x @ w.data - y) ** 2))

    out = ad.mean_squared_error(ad.matmul(ad.constant(x), w), ad.constant(y))
    ad.backward(out)
    fd = finite_difference(loss_value, w, h=1e-6)
    assert rel_err(w.grad, fd) < 1e-5


def test_unreachable_parameters_stay_untouched():
    rng = np.random.default_rng(0)
    group_a = ad.parameter(rng.normal(size=(2, 2)), name="a")
    group_b = ad.parameter(rng.normal(size=(2, 2)), name="b")
    loss = ad.sum_all(ad.square(group_a))
    ad.backward(loss)
    assert group_a.grad is not None
    assert group_b.grad is None  # untouched, not zero-filled

    before = group_b.data.copy()
    opt = AdamW([ParameterGroup("a", [group_a]), ParameterGroup("b", [group_b])],
                lr=0.1, weight_decay=0.01)
    opt.step()
    assert np.array_equal(group_b.data, before)
    assert not np.array_equal(group_a.data, group_a.data * 0.0)


def test_backward_requires_scalar():
    x = ad.parameter(np.ones((2, 2)))
    with pytest.raises(ad.ShapeError, match="backward"):
        ad.backward(ad.square(x))


@pytest.mark.parametrize(
    "build, match",
    [
        (lambda: ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3)))), "matmul"),
        (lambda: ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 2)))), "add"),
        (lambda: ad.sub(ad.constant(np.ones(3)), ad.constant(np.ones(4))), "sub"),
        (lambda: ad.concat([ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 3)))]), "concat"),
    ],
)
def test_shape_errors_name_the_operation(build, match):
    with pytest.raises(ad.ShapeError, match=match):
        build()


def test_bias_broadcast_gradient_sums_rows():
    b = ad.parameter(np.zeros(3), name="bias")
    x = ad.constant(np.ones((4, 3)))
    ad.backward(ad.sum_all(ad.add(x, b)))
    assert np.array_equal(b.grad, np.full(3, 4.0))


def test_tanh_and_concat_gradients_match_fd():
    rng = np.random.default_rng(7)
    w1 = ad.parameter(rng.normal(size=(3, 2)))
    w2 = ad.parameter(rng.normal(size=(3, 2)))
    x = rng.normal(size=(5, 3))

    def value():
        h = np.concatenate([np.tanh(x @ w1.data), x @ w2.data], axis=1)
        return float(np.mean(h * h))

    h = ad.concat([ad.tanh(ad.matmul(ad.constant(x), w1)),
                   ad.matmul(ad.constant(x), w2)], axis=1)
    ad.backward(ad.mean_all(ad.square(h)))
    for p in (w1, w2):
        assert rel_err(p.grad, finite_difference(value, p)) < 1e-4


def test_full_mlp_gradient_matches_fd(rng):
    mlp = Mlp(4, [5, 3], 2, rng)
    x = rng.normal(size=(6, 4))
    y = rng.normal(size=(6, 2))

    def value():
        return float(np.mean((mlp.forward_array(x) - y) ** 2))

    ad.backward(ad.mean_squared_error(mlp(ad.constant(x)), ad.constant(y)))
    for p in mlp.parameters():
        assert rel_err(p.grad, finite_difference(value, p)) < 1e-4


def test_shared_subexpression_accumulates():
    # f(x) = sum(x) + sum(x*x): grad = 1 + 2x
    x = ad.parameter([[1.0, 2.0]])
    ad.backward(ad.add(ad.sum_all(x), ad.sum_all(ad.square(x))))
    assert np.allclose(x.grad, np.array([[3.0, 5.0]]))


def test_gradients_accumulate_across_backwards_until_cleared():
    x = ad.parameter([[2.0]])
    ad.backward(ad.sum_all(ad.square(x)))
    first = x.grad.copy()
    ad.backward(ad.sum_all(ad.square(x)))
    assert np.allclose(x.grad, 2 * first)
    x.zero_grad()
    assert x.grad is None


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
def test_mean_all_gradient_is_uniform(values):
    x = ad.parameter(np.asarray(values))
    ad.backward(ad.mean_all(x))
    assert np.allclose(x.grad, np.full(len(values), 1.0 / len(values)))


def test_deterministic_training_trajectory():
    def run():
        rng = np.random.default_rng(42)
        mlp = Mlp(3, [4], 1, rng)
        opt = AdamW([ParameterGroup("g", mlp.parameters())], lr=1e-2)
        x = rng.normal(size=(8, 3))
        y = rng.normal(size=(8, 1))
        for _ in range(5):
            opt.zero_grad()
            ad.backward(ad.mean_squared_error(mlp(ad.constant(x)), ad.constant(y)))
            opt.step()
        return [p.data.copy() for p in mlp.parameters()]

    first, second = run(), run()
    for a, b in zip(first, second):
        assert np.array_equal(a, b)  # bit-identical
