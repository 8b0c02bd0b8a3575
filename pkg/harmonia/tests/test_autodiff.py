"""Gradients of the autodiff primitives against central finite differences."""

import numpy as np
import pytest

from harmonia import autodiff as ad
from harmonia.exceptions import ContractError
from harmonia.layers import MLP2, LSTMCell
from harmonia.store import ParameterStore

EPS = 1e-6


def numeric_grad(loss_fn, x: ad.Value) -> np.ndarray:
    grad = np.zeros_like(x.data)
    for idx in np.ndindex(x.shape):
        saved = x.data[idx]
        x.data[idx] = saved + EPS
        up = loss_fn().item()
        x.data[idx] = saved - EPS
        down = loss_fn().item()
        x.data[idx] = saved
        grad[idx] = (up - down) / (2 * EPS)
    return grad


def check(loss_fn, *params: ad.Value) -> None:
    loss = loss_fn()
    ad.backward(loss, params)
    for p in params:
        np.testing.assert_allclose(p.grad, numeric_grad(loss_fn, p), rtol=1e-5, atol=1e-7)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_elementwise_and_broadcast(rng):
    """Broadcast operands receive gradients summed back to their own shape."""
    a = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.parameter(rng.normal(size=(4,)))
    c = ad.parameter(rng.uniform(1.0, 2.0, size=(3, 1)))

    def loss():
        return ad.vsum(ad.tanh(a * b - a / c) + ad.sigmoid(b) + ad.exp(a * 0.1))

    check(loss, a, b, c)
    assert b.grad.shape == (4,)
    assert c.grad.shape == (3, 1)


def test_log_space_ops(rng):
    x = ad.parameter(rng.normal(size=(2, 5)))
    y = ad.parameter(rng.normal(size=(2, 5)))

    def loss():
        lse = ad.logsumexp(x, axis=1)
        lsm = ad.log_softmax(y, axis=0)
        return ad.vsum(lse * lse) + ad.vsum(lsm * ad.softmax(x, axis=1)) + ad.logsumexp(ad.logaddexp(x, y))

    check(loss, x, y)


def test_log_sigmoid_and_log(rng):
    x = ad.parameter(rng.normal(size=6))
    z = ad.parameter(rng.uniform(0.5, 3.0, size=6))

    def loss():
        return ad.vsum(ad.log_sigmoid(x) * ad.log(z))

    check(loss, x, z)


def test_matmul_shapes(rng):
    a = ad.parameter(rng.normal(size=(2, 3, 4)))
    w = ad.parameter(rng.normal(size=(4, 5)))
    m = ad.parameter(rng.normal(size=(5, 4)))
    v = ad.parameter(rng.normal(size=4))

    def loss():
        return ad.vsum(ad.tanh(ad.matmul(a, w))) + ad.vsum(ad.matmul(m, v) * 2.0)

    check(loss, a, w, m, v)


def test_gather_concat_stack_reshape(rng):
    x = ad.parameter(rng.normal(size=(3, 4)))
    rows = np.array([[0], [2]])
    cols = np.array([[1, 1, 3], [0, 2, 2]])

    def loss():
        gathered = x[rows, cols]  # repeated indices accumulate
        sliced = x[1:, :2].reshape(4)
        joined = ad.concat([gathered.reshape(6), sliced], axis=0)
        stacked = ad.stack([joined, joined * 3.0])
        return ad.vsum(ad.tanh(stacked)) + ad.vsum(ad.sigmoid(ad.broadcast_to(x[0], (2, 4))))

    check(loss, x)


def test_recurrent_cell_and_mlp(rng):
    store = ParameterStore()
    cell = LSTMCell("cell", 3, 4)
    mlp = MLP2("mlp", 4, 2, hidden_size=5)
    cell.declare(store, rng)
    mlp.declare(store, rng)
    xs = [ad.as_value(rng.normal(size=3)) for _ in range(3)]

    def loss():
        state = cell.zero_state()
        outputs = []
        for x in xs:
            state = cell(store, x, state)
            outputs.append(mlp(store, state[0]))
        return ad.vsum(ad.log_softmax(ad.stack(outputs), axis=1) * 0.5)

    check(loss, *store.values())


def test_unused_parameter_gets_zero_gradient():
    used = ad.parameter(np.ones(2))
    unused = ad.parameter(np.ones(2))
    unused.grad = np.full(2, 9.0)
    ad.backward(ad.vsum(used * 2.0), [used, unused])
    np.testing.assert_array_equal(used.grad, [2.0, 2.0])
    np.testing.assert_array_equal(unused.grad, [0.0, 0.0])


def test_backward_needs_scalar():
    with pytest.raises(ContractError):
        ad.backward(ad.parameter(np.ones(3)))


def test_shape_errors_are_contract_errors():
    with pytest.raises(ContractError):
        ad.add(np.ones(3), np.ones(4))
    with pytest.raises(ContractError):
        ad.matmul(np.ones((2, 3)), np.ones((4, 2)))
    with pytest.raises(ContractError):
        MLP2("m", 3, 1)(ParameterStore(), ad.as_value(np.ones(4)))
