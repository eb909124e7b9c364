"""Kolmogorov-Arnold layers: each edge carries silu-base plus spline terms.

A layer maps h_in[p] -> out[j] = sum_p ( base_weight[j,p] * silu(h_in[p])
+ spline_weight[j,p] * sum_i coeffs[j,p,i] * B_i(h_in[p]) ). Layers
compose into a KanNetwork. The layer is a single differentiable op on the
tensor tape with a hand-written backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .bspline import SplineGrid, basis_and_derivative
from .tensor import ShapeError, Tensor


@dataclass
class KanLayerParams:
    in_dim: int
    out_dim: int
    base_weight: Tensor  # [out_dim, in_dim]
    spline_weight: Tensor  # [out_dim, in_dim]
    spline_coeffs: Tensor  # [out_dim, in_dim, n_basis]
    grid: SplineGrid

    def parameters(self) -> list[Tensor]:
        return [self.base_weight, self.spline_weight, self.spline_coeffs]


@dataclass
class KanNetwork:
    layers: list[KanLayerParams]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"KAN layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def kan_init(
    in_dim: int, out_dim: int, grid: SplineGrid, rng: np.random.Generator
) -> KanLayerParams:
    """Uniform fan-in base init, unit spline weights, small spline coeffs."""
    if in_dim < 1 or out_dim < 1:
        raise ValueError("layer dims must be positive")
    nb = grid.n_basis
    bound = np.sqrt(6.0 / in_dim)
    base = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    spline_w = np.ones((out_dim, in_dim))
    coeffs = rng.uniform(-0.1 / nb, 0.1 / nb, size=(out_dim, in_dim, nb))
    return KanLayerParams(
        in_dim,
        out_dim,
        Tensor(base, requires_grad=True),
        Tensor(spline_w, requires_grad=True),
        Tensor(coeffs, requires_grad=True),
        grid,
    )


def kan_network_init(
    dims: list[int], grid: SplineGrid, rng: np.random.Generator
) -> KanNetwork:
    layers = [kan_init(a, b, grid, rng) for a, b in zip(dims, dims[1:])]
    return KanNetwork(layers)


def kan_layer_forward(h_in: Tensor, p: KanLayerParams) -> Tensor:
    if h_in.data.ndim != 2 or h_in.shape[1] != p.in_dim:
        raise ShapeError(f"kan_layer_forward: input {h_in.shape} does not match in_dim {p.in_dim}")

    x = h_in.data
    basis, dbasis = basis_and_derivative(x, p.grid)  # [batch, in, nb]
    s = T._sigmoid_arr(x)
    sx = x * s  # silu
    wb = p.base_weight.data
    ws = p.spline_weight.data
    c = p.spline_coeffs.data
    # spline_val[b, o, i] = sum_n c[o,i,n] * basis[b,i,n]
    spline_val = np.einsum("oin,bin->boi", c, basis, optimize=True)
    out = sx @ wb.T + np.einsum("oi,boi->bo", ws, spline_val, optimize=True)

    def bwd(g):  # g: [batch, out]
        g_wb = g.T @ sx
        g_ws = np.einsum("bo,boi->oi", g, spline_val, optimize=True)
        g_c = np.einsum("bo,bin->oin", g, basis, optimize=True) * ws[:, :, None]
        dsilu = s + x * s * (1.0 - s)
        dspline = np.einsum("oin,bin->boi", c, dbasis, optimize=True)
        g_x = (g @ wb) * dsilu + np.einsum("bo,oi,boi->bi", g, ws, dspline, optimize=True)
        return g_x, g_wb, g_ws, g_c

    return T.from_op(
        out, (h_in, p.base_weight, p.spline_weight, p.spline_coeffs), bwd, "kan_layer"
    )


def kan_forward(h: Tensor, net: KanNetwork) -> Tensor:
    if h.data.ndim != 2 or h.shape[1] != net.in_dim:
        raise ShapeError(f"kan_forward: input {h.shape} does not match net input dim {net.in_dim}")
    out = h
    for layer in net.layers:
        out = kan_layer_forward(out, layer)
    return out
