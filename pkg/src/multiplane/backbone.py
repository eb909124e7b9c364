"""Five-stage 3D CNN branch: stem downsample, residual blocks, channel concat.

Stage layout (channel width after each stage: 32, 64, 128, 256, 256):
  1: stem conv k=2 s=2 -> 16ch, then residual block (k=3 p=1), concat
  2: maxpool 2/2, residual block at 32ch (k=3 p=1), concat
  3: maxpool, residual block at 64ch (k=3 p=1), concat
  4: maxpool, residual block at 128ch (k=1), concat
  5: maxpool, two 1x1x1 convs at 256ch, direct output
Residual block: y = relu(x + convB(relu(convA(x)))); ReLU after each conv
inside the block and after the addition. Spatial dims shrink by 2 per
stage, /32 overall.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ConfigurationError(ValueError):
    pass


@dataclass
class ConvParams:
    weight: Tensor  # [C_out, C_in, k, k, k]
    bias: Tensor  # [C_out]
    stride: int = 1
    padding: int = 0

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class StageParams:
    conv_a: ConvParams
    conv_b: ConvParams


@dataclass
class BackboneParams:
    stem: ConvParams
    stages: list[StageParams]  # residual blocks of stages 1-4, then stage 5 convs

    def parameters(self) -> list[Tensor]:
        out = self.stem.parameters()
        for s in self.stages:
            out += s.conv_a.parameters() + s.conv_b.parameters()
        return out


@dataclass
class FeatureMap:
    plane: str
    tensor: Tensor


# (width, kernel, padding) for the residual blocks of stages 1-5
_STAGE_SPECS = [(16, 3, 1), (32, 3, 1), (64, 3, 1), (128, 1, 0), (256, 1, 0)]
STAGE_CHANNELS = [32, 64, 128, 256, 256]


def _conv_init(c_out: int, c_in: int, k: int, rng: np.random.Generator, **kw) -> ConvParams:
    fan_in = c_in * k ** 3
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k, k))
    b = rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=(c_out,))
    return ConvParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True), **kw)


def backbone_init(rng: np.random.Generator) -> BackboneParams:
    stem = _conv_init(16, 1, 2, rng, stride=2)
    stages = []
    c_in = 16
    for width, k, p in _STAGE_SPECS:
        conv_a = _conv_init(width, c_in, k, rng, padding=p)
        conv_b = _conv_init(width, width, k, rng, padding=p)
        stages.append(StageParams(conv_a, conv_b))
        c_in = 2 * width  # concat doubles; stage 5's direct output is never consumed here
    return BackboneParams(stem, stages)


def _residual_block(x: Tensor, stage: StageParams) -> Tensor:
    y = T.relu(stage.conv_a(x))
    y = stage.conv_b(y)
    return T.relu(T.add(x, y))


def backbone_forward(vol: Tensor, params: BackboneParams, plane: str = "axial") -> FeatureMap:
    if vol.data.ndim != 4 or vol.shape[0] != 1:
        raise T.ShapeError(f"backbone expects a [1,D,H,W] volume, got {vol.shape}")
    for axis, n in zip("DHW", vol.shape[1:]):
        if n % 32 != 0:
            raise ConfigurationError(f"axis {axis}={n} not divisible by 32")

    x = params.stem(vol)
    for i, stage in enumerate(params.stages):
        if i > 0:
            x = T.maxpool3d(x, k=2, stride=2)
        if i < 4:
            x = T.concat_channels(x, _residual_block(x, stage))
        else:
            x = T.relu(stage.conv_a(x))
            x = T.relu(stage.conv_b(x))
    return FeatureMap(plane, x)


def parameter_count(params: BackboneParams) -> int:
    return sum(p.size for p in params.parameters())
