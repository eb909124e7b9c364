"""KAN layer/network tests: scalar oracle, init laws, and a small regression fit."""

import numpy as np
import pytest

import multiplane.tensor as T
from multiplane.bspline import SplineGrid, basis_matrix
from multiplane.kan import (
    KanLayerParams,
    KanNetwork,
    kan_forward,
    kan_init,
    kan_layer_forward,
    kan_network_init,
)
from multiplane.tensor import ShapeError, Tensor


def _grid(gs=5, deg=3):
    return SplineGrid(grid_size=gs, degree=deg)


def _layer(in_dim, out_dim, seed=0, gs=5):
    return kan_init(in_dim, out_dim, _grid(gs), np.random.default_rng(seed))


def layer_oracle(x_row, p):
    """out[j] = sum_p Wb[j,p]*silu(x_p) + Ws[j,p]*sum_i c[j,p,i]*B_i(x_p)."""
    out = np.zeros(p.out_dim)
    basis = basis_matrix(x_row, p.grid)  # [in, nb]
    silu = x_row / (1.0 + np.exp(-x_row)) * 1.0
    for j in range(p.out_dim):
        for q in range(p.in_dim):
            spline = float(p.spline_coeffs.data[j, q] @ basis[q])
            out[j] += p.base_weight.data[j, q] * silu[q] + p.spline_weight.data[j, q] * spline
    return out


def test_layer_matches_scalar_oracle():
    p = _layer(3, 4, seed=7)
    x = np.array([[0.25, -0.6, 0.9], [0.0, 1.0, -1.0]])
    got = kan_layer_forward(Tensor(x), p).data
    for b in range(2):
        assert np.max(np.abs(got[b] - layer_oracle(x[b], p))) < 1e-12


def test_batch_rows_independent():
    p = _layer(2, 3, seed=1)
    x = np.array([[0.3, -0.2], [0.8, 0.1], [-0.5, 0.9]])
    full = kan_layer_forward(Tensor(x), p).data
    for b in range(3):
        solo = kan_layer_forward(Tensor(x[b:b + 1]), p).data
        assert np.max(np.abs(full[b:b + 1] - solo)) < 1e-12


def test_silu_identity_configuration():
    # zero spline path + identity base weight reduces the layer to silu
    g = _grid()
    wb = Tensor(np.eye(2), requires_grad=True)
    ws = Tensor(np.zeros((2, 2)), requires_grad=True)
    c = Tensor(np.zeros((2, 2, g.n_basis)), requires_grad=True)
    p = KanLayerParams(2, 2, wb, ws, c, g)
    x = np.array([[0.4, -0.7]])
    got = kan_layer_forward(Tensor(x), p).data
    assert np.allclose(got, x / (1.0 + np.exp(-x)))


def test_init_bounds_and_determinism():
    p1 = _layer(6, 4, seed=3)
    p2 = _layer(6, 4, seed=3)
    assert np.array_equal(p1.base_weight.data, p2.base_weight.data)
    assert np.array_equal(p1.spline_coeffs.data, p2.spline_coeffs.data)
    assert np.array_equal(p1.spline_weight.data, np.ones((4, 6)))
    bound = np.sqrt(6.0 / 6)
    assert (np.abs(p1.base_weight.data) <= bound).all()
    nb = p1.grid.n_basis
    assert (np.abs(p1.spline_coeffs.data) <= 0.1 / nb).all()
    p3 = _layer(6, 4, seed=4)
    assert not np.array_equal(p1.base_weight.data, p3.base_weight.data)


def test_network_chaining_validated():
    a = _layer(3, 4)
    b = _layer(5, 2)
    with pytest.raises(ShapeError):
        KanNetwork([a, b])
    net = kan_network_init([3, 5, 2], _grid(), np.random.default_rng(0))
    assert net.in_dim == 3 and net.out_dim == 2
    assert len(net.parameters()) == 6


def test_forward_shape_validation():
    p = _layer(3, 4)
    with pytest.raises(ShapeError):
        kan_layer_forward(Tensor(np.zeros((2, 5))), p)
    net = KanNetwork([p])
    with pytest.raises(ShapeError):
        kan_forward(Tensor(np.zeros((7,))), net)


def test_gradients_match_finite_differences():
    p = _layer(3, 2, seed=9)
    x = Tensor(np.array([[0.2, -0.4, 0.7]]), requires_grad=True)
    coeff = np.array([[1.3, -0.8]])

    def loss_val():
        return float(np.sum(kan_layer_forward(x, p).data * coeff))

    T.backward(T.sum_over(T.mul(kan_layer_forward(x, p), Tensor(coeff))))
    eps = 1e-6
    for t in [x] + p.parameters():
        flat = t.data.reshape(-1)
        idxs = np.random.default_rng(5).choice(flat.size, size=min(6, flat.size), replace=False)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_val()
            flat[idx] = orig - eps
            dn = loss_val()
            flat[idx] = orig
            num = (up - dn) / (2 * eps)
            assert abs(num - t.grad.reshape(-1)[idx]) < 1e-5 * max(1.0, abs(num))


def test_network_composes_layerwise():
    net = kan_network_init([2, 3, 1], _grid(), np.random.default_rng(11))
    x = Tensor(np.array([[0.1, -0.3]]))
    via_net = kan_forward(x, net).data
    via_layers = kan_layer_forward(kan_layer_forward(x, net.layers[0]), net.layers[1]).data
    assert np.array_equal(via_net, via_layers)


@pytest.mark.slow
def test_fits_sine_regression():
    # 1 -> 8 -> 1 network fits sin(3x) on [-1, 1] with plain gradient descent
    rng = np.random.default_rng(0)
    net = kan_network_init([1, 8, 1], SplineGrid(grid_size=8, degree=3), rng)
    xs = np.linspace(-1.0, 1.0, 64).reshape(-1, 1)
    ys = np.sin(3.0 * xs)
    lr = 0.05
    mse = None
    for step in range(2000):
        pred = kan_forward(Tensor(xs), net)
        diff = T.sub(pred, Tensor(ys))
        loss = T.mean_over(T.mul(diff, diff))
        mse = float(loss.data)
        for p in net.parameters():
            p.zero_grad()
        T.backward(loss)
        for p in net.parameters():
            p.data -= lr * p.grad
    assert mse < 1e-2
