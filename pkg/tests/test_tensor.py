import threading

import numpy as np
import pytest

from inceptext.tensor import (Graph, Tensor, add, backward, concat, elementwise, finite_difference_gradient,
                              gradient_check, mean, mul, no_grad, relative_error, relu, reshape, scale, take,
                              transpose, tsum)


def test_relu_values():
    assert relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]


def test_add_zero_is_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(add(x, Tensor(np.zeros((2, 3)))).data, x.data)


def test_mul_product_rule():
    a = Tensor([2.0], requires_grad=True)
    b = Tensor([3.0], requires_grad=True)
    backward(tsum(mul(a, b)))
    assert a.grad.tolist() == [3.0]
    assert b.grad.tolist() == [2.0]


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(3, 2\)"):
        elementwise("add", Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_unknown_kind():
    with pytest.raises(ValueError):
        elementwise("div", Tensor([1.0]), Tensor([1.0]))


def test_scale_is_the_only_broadcast():
    x = Tensor([1.0, -2.0], requires_grad=True)
    y = scale(x, 3.0)
    assert y.data.tolist() == [3.0, -6.0]
    backward(tsum(y))
    assert x.grad.tolist() == [3.0, 3.0]


def test_sum_gradient_is_ones():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    backward(tsum(x))
    assert x.grad.tolist() == [1, 1, 1]


def test_sum_of_squares_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(tsum(mul(x, x)))
    assert x.grad.tolist() == [2.0, 4.0]


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        backward(mul(x, x))


def test_fan_out_accumulates():
    # y = x*x + 3x uses x three times; compare against a graph with distinct copies
    x = Tensor([1.5, -0.5], requires_grad=True)
    backward(tsum(add(mul(x, x), scale(x, 3.0))))
    a = Tensor([1.5, -0.5], requires_grad=True)
    b = Tensor([1.5, -0.5], requires_grad=True)
    c = Tensor([1.5, -0.5], requires_grad=True)
    backward(tsum(add(mul(a, b), scale(c, 3.0))))
    assert np.allclose(x.grad, a.grad + b.grad + c.grad)
    assert np.allclose(x.grad, 2 * x.data + 3)


def test_graph_topological_and_visits_once():
    x = Tensor(np.ones(3), requires_grad=True)
    h = relu(x)
    y = tsum(add(mul(h, h), h))
    g = Graph.from_root(y)
    ids = [n.id for n in g.nodes]
    assert ids == sorted(ids)
    assert len(set(ids)) == len(ids)
    position = {n.id: i for i, n in enumerate(g.nodes)}
    for n in g.nodes:
        for inp in n.inputs:
            if inp.node is not None:
                assert position[inp.node.id] < position[n.id]


def test_backward_is_deterministic():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(4, 5))

    def run():
        x = Tensor(w, requires_grad=True)
        y = tsum(mul(relu(reshape(transpose(x, (1, 0)), (20,))), Tensor(np.arange(20.0))))
        backward(y)
        return x.grad.copy()

    assert np.array_equal(run(), run())


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = mul(x, x)
    assert y.node is None and not y.requires_grad


def test_no_grad_is_thread_local():
    seen = []

    def worker():
        x = Tensor([1.0], requires_grad=True)
        seen.append(mul(x, x).requires_grad)

    with no_grad():
        t = threading.Thread(target=worker)
        t.start()
        t.join()
    assert seen == [True]


def test_shape_ops_gradients():
    rng = np.random.default_rng(3)

    def f(a, b):
        c = concat([a, b], axis=1)
        t = take(transpose(c, (1, 0)), np.array([0, 2, 2, 4]))
        return tsum(mul(reshape(t, (-1,)), reshape(t, (-1,))))

    assert gradient_check(f, [rng.uniform(-1, 1, (3, 2)), rng.uniform(-1, 1, (3, 3))]) < 1e-6


def test_mean_gradient():
    x = Tensor(np.ones((2, 4)), requires_grad=True)
    backward(mean(x))
    assert np.allclose(x.grad, 1 / 8)


def test_finite_difference_linear_and_square():
    x = Tensor(np.array([0.3, -1.2, 2.0]))
    fd = finite_difference_gradient(lambda t: tsum(t), x)
    assert np.allclose(fd.data, 1.0)
    fd = finite_difference_gradient(lambda t: tsum(mul(t, t)), Tensor([3.0]))
    assert abs(fd.data[0] - 6.0) < 1e-6


def test_finite_difference_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        finite_difference_gradient(lambda t: float("nan"), Tensor([1.0]))


def test_finite_difference_runs_in_float64():
    seen = []

    def f(t):
        seen.append(t.dtype)
        return tsum(t)

    finite_difference_gradient(f, Tensor(np.ones(2, dtype=np.float32)))
    assert all(d == np.float64 for d in seen)


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.001])) == pytest.approx(0.001 / 1.001)


def test_forward_values_stay_finite():
    x = Tensor(np.array([1e3, -1e3]), requires_grad=True)
    y = mul(relu(x), x)
    assert np.all(np.isfinite(y.data))
