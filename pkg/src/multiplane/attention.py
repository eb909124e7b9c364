"""Spatial-then-channel attention with a KAN-driven channel branch.

Spatial: channel-wise max and mean maps, concatenated, 3x3x3 conv (pad 1),
sigmoid; the map gates every channel. Channel: global average over voxels
per channel, passed through a small net (KAN by default, MLP for the
ablation variants), sigmoid; the vector gates every voxel. The `maxavg_*`
variants add a channel-wise global-max vector through the same net,
summed before the sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import tensor as T
from .backbone import ConfigurationError, ConvParams, FeatureMap, _conv_init
from .bspline import SplineGrid
from .kan import KanNetwork, kan_forward, kan_network_init
from .tensor import Tensor

VARIANTS = ("avg_kan", "avg_mlp", "maxavg_kan", "maxavg_mlp")


@dataclass
class MlpParams:
    """Two-layer perceptron C -> hidden -> C with ReLU, the ablation stand-in."""

    w1: Tensor  # [hidden, C]
    b1: Tensor
    w2: Tensor  # [C, hidden]
    b2: Tensor

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class KanscParams:
    spatial_conv: ConvParams  # [1, 2, 3, 3, 3] + bias
    channel_net: Union[KanNetwork, MlpParams]
    variant: str = "avg_kan"

    def parameters(self) -> list[Tensor]:
        return self.spatial_conv.parameters() + self.channel_net.parameters()


def mlp_init(c: int, hidden: int, rng: np.random.Generator) -> MlpParams:
    def lin(n_out, n_in):
        bound = np.sqrt(6.0 / n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = np.zeros(n_out)
        return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)

    w1, b1 = lin(hidden, c)
    w2, b2 = lin(c, hidden)
    return MlpParams(w1, b1, w2, b2)


def kansc_init(
    channels: int,
    rng: np.random.Generator,
    variant: str = "avg_kan",
    hidden: int = 32,
    grid: Optional[SplineGrid] = None,
) -> KanscParams:
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown attention variant {variant!r}; expected one of {VARIANTS}")
    spatial = _conv_init(1, 2, 3, rng, padding=1)
    if variant.endswith("_kan"):
        net = kan_network_init([channels, hidden, channels], grid or SplineGrid(), rng)
    else:
        net = mlp_init(channels, hidden, rng)
    return KanscParams(spatial, net, variant)


def _channel_net_forward(vec: Tensor, net: Union[KanNetwork, MlpParams]) -> Tensor:
    if isinstance(net, KanNetwork):
        return kan_forward(vec, net)
    h = T.relu(T.add(T.matmul(vec, T.permute_axes(net.w1, (1, 0))), T.reshape(net.b1, (1, net.b1.size))))
    return T.add(T.matmul(h, T.permute_axes(net.w2, (1, 0))), T.reshape(net.b2, (1, net.b2.size)))


def spatial_attention(fm: FeatureMap, params: KanscParams) -> tuple[FeatureMap, Tensor]:
    f = fm.tensor
    c = f.shape[0]
    f_max = T.reshape(T.max_over(f, axes=(0,)), (1,) + f.shape[1:])
    f_avg = T.reshape(T.mean_over(f, axes=(0,)), (1,) + f.shape[1:])
    m = T.sigmoid(params.spatial_conv(T.concat_channels(f_max, f_avg)))
    gated = T.mul(f, T.expand(m, f.shape))
    return FeatureMap(fm.plane, gated), m


def channel_attention(fm: FeatureMap, params: KanscParams) -> tuple[FeatureMap, Tensor]:
    f = fm.tensor
    c = f.shape[0]
    net_in_dim = params.channel_net.in_dim if isinstance(params.channel_net, KanNetwork) else params.channel_net.w1.shape[1]
    if net_in_dim != c:
        raise ConfigurationError(f"channel net expects {net_in_dim} channels, feature map has {c}")
    avg = T.reshape(T.mean_over(f, axes=(1, 2, 3)), (1, c))
    pre = _channel_net_forward(avg, params.channel_net)
    if params.variant.startswith("maxavg"):
        mx = T.reshape(T.max_over(f, axes=(1, 2, 3)), (1, c))
        pre = T.add(pre, _channel_net_forward(mx, params.channel_net))
    m = T.reshape(T.sigmoid(pre), (c,))
    gate = T.expand(T.reshape(m, (c, 1, 1, 1)), f.shape)
    return FeatureMap(fm.plane, T.mul(f, gate)), m


def kansc_forward(fm: FeatureMap, params: KanscParams) -> FeatureMap:
    if params.variant not in VARIANTS:
        raise ConfigurationError(f"unknown attention variant {params.variant!r}")
    spatial_out, _ = spatial_attention(fm, params)
    out, _ = channel_attention(spatial_out, params)
    return out
