"""Full model: plane reorientation, per-plane branches, fusion, and the
position-attention classification head, plus checkpoint serialization.

A volume is permuted into each active anatomical plane, run through that
plane's backbone and attention module, realigned to the axial frame,
fused by element-wise addition, flattened to [C', N] position embeddings,
and classified per position; subject logits are the mean over positions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .attention import VARIANTS, KanscParams, kansc_init, kansc_forward
from .backbone import (
    BackboneParams,
    ConfigurationError,
    FeatureMap,
    backbone_forward,
    backbone_init,
)
from .bspline import SplineGrid
from .tensor import Tensor

PLANES = ("axial", "coronal", "sagittal")
# Spatial-axis permutations of (D, H, W); each is paired with its inverse
# so reorient -> realign round-trips exactly.
PLANE_PERMS = {"axial": (0, 1, 2), "coronal": (1, 0, 2), "sagittal": (2, 1, 0)}
PLANE_INVERSE = {p: tuple(int(i) for i in np.argsort(perm)) for p, perm in PLANE_PERMS.items()}

CHANNELS = 256  # backbone output width
N_CLASSES = 2


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    active_planes: tuple[str, ...] = PLANES
    attention_variant: str = "avg_kan"
    kan_hidden: int = 32
    grid_size: int = 8
    spline_degree: int = 3
    head_dim: int = 64

    def __post_init__(self):
        if not self.active_planes:
            raise ConfigurationError("active_planes must be non-empty")
        for p in self.active_planes:
            if p not in PLANES:
                raise ConfigurationError(f"unknown plane {p!r}")
        if self.attention_variant not in VARIANTS:
            raise ConfigurationError(f"unknown attention variant {self.attention_variant!r}")

    def spline_grid(self) -> SplineGrid:
        return SplineGrid(grid_size=self.grid_size, degree=self.spline_degree)


@dataclass
class HeadParams:
    w: Tensor  # [d, C']
    v: Tensor  # [d]
    psi: Tensor  # [C', n_classes]

    def parameters(self) -> list[Tensor]:
        return [self.w, self.v, self.psi]


@dataclass
class BranchParams:
    backbone: BackboneParams
    kansc: KanscParams


@dataclass
class ModelParams:
    config: ModelConfig
    branches: dict[str, BranchParams]
    head: HeadParams

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for plane in self.config.active_planes:
            br = self.branches[plane]
            names = ["stem"] + [f"stage{i}" for i in range(1, 6)]
            convs = [br.backbone.stem]
            for s in br.backbone.stages:
                convs.append(s.conv_a)
                convs.append(s.conv_b)
            conv_names = ["stem"]
            for i in range(1, 6):
                conv_names += [f"stage{i}/conv_a", f"stage{i}/conv_b"]
            for name, conv in zip(conv_names, convs):
                out[f"{plane}/backbone/{name}/weight"] = conv.weight
                out[f"{plane}/backbone/{name}/bias"] = conv.bias
            out[f"{plane}/kansc/spatial/weight"] = br.kansc.spatial_conv.weight
            out[f"{plane}/kansc/spatial/bias"] = br.kansc.spatial_conv.bias
            net = br.kansc.channel_net
            if hasattr(net, "layers"):
                for i, layer in enumerate(net.layers):
                    out[f"{plane}/kansc/kan{i}/base_weight"] = layer.base_weight
                    out[f"{plane}/kansc/kan{i}/spline_weight"] = layer.spline_weight
                    out[f"{plane}/kansc/kan{i}/spline_coeffs"] = layer.spline_coeffs
            else:
                out[f"{plane}/kansc/mlp/w1"] = net.w1
                out[f"{plane}/kansc/mlp/b1"] = net.b1
                out[f"{plane}/kansc/mlp/w2"] = net.w2
                out[f"{plane}/kansc/mlp/b2"] = net.b2
        out["head/w"] = self.head.w
        out["head/v"] = self.head.v
        out["head/psi"] = self.head.psi
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


@dataclass
class HeadOutput:
    patch_weights: Tensor  # [N]
    patch_logits: Tensor  # [N, n_classes]
    global_logits: Tensor  # [n_classes]
    f_total: Tensor  # [C', N]


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic per-seed initialization; independent stream per branch."""
    seq = np.random.SeedSequence(seed)
    streams = seq.spawn(len(PLANES) + 1)
    branches = {}
    for i, plane in enumerate(PLANES):
        if plane not in config.active_planes:
            continue
        rng = np.random.default_rng(streams[i])
        backbone = backbone_init(rng)
        kansc = kansc_init(
            CHANNELS,
            rng,
            variant=config.attention_variant,
            hidden=config.kan_hidden,
            grid=config.spline_grid(),
        )
        branches[plane] = BranchParams(backbone, kansc)
    rng = np.random.default_rng(streams[-1])
    d, c = config.head_dim, CHANNELS
    # v and psi start two orders of magnitude cooler than fan-in scaling.
    # Backbone features reach O(10), so a fan-in v puts the position gate's
    # sigmoid pre-activation at O(100): the gate is born saturated and the
    # first confident-wrong CE step can pin it at sigma(-100) for good —
    # fatal when the feature map has a single position. Cool v keeps the
    # gate near 0.5, cool psi keeps the initial logits near zero, and both
    # recover their scale within a few epochs of training.
    head = HeadParams(
        Tensor(rng.uniform(-np.sqrt(6.0 / c), np.sqrt(6.0 / c), size=(d, c)), requires_grad=True),
        Tensor(0.01 * rng.uniform(-np.sqrt(6.0 / d), np.sqrt(6.0 / d), size=(d,)), requires_grad=True),
        Tensor(0.01 * rng.uniform(-np.sqrt(6.0 / c), np.sqrt(6.0 / c), size=(c, N_CLASSES)), requires_grad=True),
    )
    return ModelParams(config, branches, head)


def reorient(vol: Tensor, plane: str) -> Tensor:
    """Pure axis permutation of a [1,D,H,W] volume into the given plane."""
    perm = PLANE_PERMS[plane]
    return T.permute_axes(vol, (0,) + tuple(p + 1 for p in perm))


def realign(fm: FeatureMap) -> FeatureMap:
    """Inverse spatial permutation back to the axial frame; channels untouched."""
    inv = PLANE_INVERSE[fm.plane]
    return FeatureMap(fm.plane, T.permute_axes(fm.tensor, (0,) + tuple(p + 1 for p in inv)))


def realign_array(vol: np.ndarray, plane: str) -> np.ndarray:
    """Array-level realignment for post-hoc maps (e.g. CAM volumes)."""
    return np.ascontiguousarray(vol.transpose(PLANE_INVERSE[plane]))


def fuse(maps: dict[str, FeatureMap], active_planes) -> Tensor:
    if not active_planes:
        raise ConfigurationError("fuse: empty plane subset")
    tensors = [maps[p].tensor for p in active_planes]
    out = tensors[0]
    for t in tensors[1:]:
        out = T.add(out, t)
    return out


def head_forward(f_total: Tensor, params: HeadParams) -> HeadOutput:
    if f_total.data.ndim != 2 or f_total.shape[0] != params.w.shape[1]:
        raise T.ShapeError(f"head_forward: F_total {f_total.shape} does not match w {params.w.shape}")
    n = f_total.shape[1]
    d = params.v.shape[0]
    hidden = T.relu(T.matmul(params.w, f_total))  # [d, N]
    m = T.sigmoid(T.reshape(T.matmul(T.reshape(params.v, (1, d)), hidden), (n,)))  # [N]
    gated = T.mul(f_total, T.expand(T.reshape(m, (1, n)), f_total.shape))
    alpha = T.matmul(T.permute_axes(gated, (1, 0)), params.psi)  # [N, classes]
    global_logits = T.mean_over(alpha, axes=(0,))
    return HeadOutput(m, alpha, global_logits, f_total)


def model_forward(
    vol: Tensor, params: ModelParams, capture: Optional[dict] = None
) -> HeadOutput:
    """Forward pass of the full model on one [1,D,H,W] volume.

    When `capture` is a dict it receives, per plane, the final backbone
    feature map (pre-attention) and the post-attention map, both in the
    branch's own frame.
    """
    cfg = params.config
    realigned: dict[str, FeatureMap] = {}
    for plane in cfg.active_planes:
        br = params.branches[plane]
        fm = backbone_forward(reorient(vol, plane), br.backbone, plane)
        att = kansc_forward(fm, br.kansc)
        if capture is not None:
            capture[plane] = {"stage5": fm.tensor, "post_attention": att.tensor}
        realigned[plane] = realign(att)
    fused = fuse(realigned, cfg.active_planes)
    c = fused.shape[0]
    f_total = T.reshape(fused, (c, fused.size // c))
    return head_forward(f_total, params.head)


# ---------------------------------------------------------------------------
# Checkpoint format: magic "MPKC", u32 version, length-prefixed named tensors
# ---------------------------------------------------------------------------

MAGIC = b"MPKC"
VERSION = 1


def _meta_tensors(cfg: ModelConfig) -> dict[str, np.ndarray]:
    return {
        "meta/planes": np.array([PLANES.index(p) for p in cfg.active_planes], dtype=float),
        "meta/variant": np.array([VARIANTS.index(cfg.attention_variant)], dtype=float),
        "meta/kan_hidden": np.array([cfg.kan_hidden], dtype=float),
        "meta/grid_size": np.array([cfg.grid_size], dtype=float),
        "meta/spline_degree": np.array([cfg.spline_degree], dtype=float),
        "meta/head_dim": np.array([cfg.head_dim], dtype=float),
    }


def save_checkpoint(path, params: ModelParams):
    entries = dict(_meta_tensors(params.config))
    entries.update({k: v.data for k, v in params.named_parameters().items()})
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint file")
    return b


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
        version, count = struct.unpack("<II", _read_exact(f, 8))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(f, 8 * n), dtype="<f8").reshape(shape)
            entries[name] = data.copy()

    try:
        cfg = ModelConfig(
            active_planes=tuple(PLANES[int(i)] for i in entries["meta/planes"]),
            attention_variant=VARIANTS[int(entries["meta/variant"][0])],
            kan_hidden=int(entries["meta/kan_hidden"][0]),
            grid_size=int(entries["meta/grid_size"][0]),
            spline_degree=int(entries["meta/spline_degree"][0]),
            head_dim=int(entries["meta/head_dim"][0]),
        )
    except KeyError as e:
        raise CheckpointError(f"checkpoint missing metadata entry {e}") from None

    params = init_model(cfg, seed=0)
    named = params.named_parameters()
    for name, tensor in named.items():
        if name not in entries:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        if entries[name].shape != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {entries[name].shape}, "
                f"configuration {tensor.data.shape}"
            )
        tensor.data = np.ascontiguousarray(entries[name])
    extra = set(entries) - set(named) - set(_meta_tensors(cfg))
    if extra:
        raise CheckpointError(f"unexpected checkpoint entries {sorted(extra)[:3]}")
    return params
