"""Grad-CAM localization, atlas-region aggregation, and region correlation.

Per branch, the CAM is the ReLU of channel activations weighted by the
spatial mean of the target-class score gradient at the final backbone
stage (pre-attention by default). Branch CAMs are realigned to the axial
frame, upsampled by nearest neighbor to input resolution, averaged over
the active planes, and min-max normalized (skipped when identically 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .model import ModelParams, model_forward, realign_array
from .tensor import ShapeError, Tensor


@dataclass
class Atlas:
    labels: np.ndarray  # integer volume [D,H,W]; 0 = background
    names: Optional[dict[int, str]] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.min() < 0:
            raise ValueError("atlas labels must be non-negative")

    def regions(self) -> list[int]:
        return [int(r) for r in np.unique(self.labels) if r != 0]


@dataclass
class CamReport:
    cam: np.ndarray  # [D,H,W] in [0,1] (or all zero)
    region_scores: Optional[dict[int, float]] = None
    top_k: Optional[list[int]] = None
    per_plane: Optional[dict[str, np.ndarray]] = None


def gradcam(
    params: ModelParams,
    vol: Tensor,
    target_class: int,
    post_attention: bool = False,
) -> CamReport:
    if target_class not in (0, 1):
        raise ValueError(f"invalid class index {target_class}")
    capture: dict = {}
    out = model_forward(vol, params, capture=capture)
    onehot = np.zeros(2)
    onehot[target_class] = 1.0
    score = T.sum_over(T.mul(out.global_logits, Tensor(onehot)))
    T.backward(score)

    dims = vol.shape[1:]
    key = "post_attention" if post_attention else "stage5"
    per_plane: dict[str, np.ndarray] = {}
    acc = np.zeros(dims)
    for plane in params.config.active_planes:
        act = capture[plane][key]
        a = act.data
        g = act.grad if act.grad is not None else np.zeros_like(a)
        weights = g.mean(axis=(1, 2, 3))
        cam = np.maximum((weights[:, None, None, None] * a).sum(axis=0), 0.0)
        cam = realign_array(cam, plane)
        for axis, (want, have) in enumerate(zip(dims, cam.shape)):
            if want % have:
                raise ShapeError(f"CAM dims {cam.shape} do not divide volume dims {dims}")
            cam = np.repeat(cam, want // have, axis=axis)
        per_plane[plane] = cam
        acc += cam
    acc /= len(params.config.active_planes)
    lo, hi = acc.min(), acc.max()
    if hi > lo:
        acc = (acc - lo) / (hi - lo)
    elif hi > 0:  # constant nonzero map
        acc = np.ones_like(acc)
    return CamReport(acc, per_plane=per_plane)


def region_aggregate(cam: np.ndarray, atlas: Atlas) -> dict[int, float]:
    """Mean CAM per non-background region present in the atlas."""
    if cam.shape != atlas.labels.shape:
        raise ShapeError(f"CAM dims {cam.shape} != atlas dims {atlas.labels.shape}")
    flat_labels = atlas.labels.reshape(-1)
    flat_cam = cam.reshape(-1)
    n = int(flat_labels.max()) + 1
    sums = np.bincount(flat_labels, weights=flat_cam, minlength=n)
    counts = np.bincount(flat_labels, minlength=n)
    return {r: float(sums[r] / counts[r]) for r in range(1, n) if counts[r]}


def top_regions(region_scores: dict[int, float], k: int = 20) -> list[int]:
    """Region indices by descending score; ties broken by ascending index."""
    if k > len(region_scores):
        raise ValueError(f"k={k} exceeds region count {len(region_scores)}")
    ranked = sorted(region_scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [r for r, _ in ranked[:k]]


def region_correlation(
    reports: Sequence[CamReport], regions: Sequence[int]
) -> dict[tuple[int, int], Optional[float]]:
    """Pearson correlation across subjects between every region pair.

    Zero-variance regions yield None entries (never NaN). Requires at
    least 3 subjects; every report must cover the requested regions.
    """
    if len(reports) < 3:
        raise ValueError(f"need >= 3 subjects for correlation, got {len(reports)}")
    vectors = {}
    for r in regions:
        vals = []
        for rep in reports:
            if rep.region_scores is None or r not in rep.region_scores:
                raise ValueError(f"report missing region {r}")
            vals.append(rep.region_scores[r])
        vectors[r] = np.asarray(vals)

    out: dict[tuple[int, int], Optional[float]] = {}
    for a in regions:
        for b in regions:
            if a == b:
                out[(a, b)] = 1.0
                continue
            xa, xb = vectors[a], vectors[b]
            da, db = xa - xa.mean(), xb - xb.mean()
            na, nb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
            out[(a, b)] = None if na == 0 or nb == 0 else float((da * db).sum() / (na * nb))
    return out


def format_region_scores(scores: dict[int, float]) -> str:
    lines = ["region\tscore"]
    lines += [f"{r}\t{scores[r]:.10g}" for r in sorted(scores)]
    return "\n".join(lines) + "\n"


def format_correlation(
    corr: dict[tuple[int, int], Optional[float]], regions: Sequence[int]
) -> str:
    header = "region\t" + "\t".join(str(r) for r in regions)
    lines = [header]
    for a in regions:
        cells = ["NA" if corr[(a, b)] is None else f"{corr[(a, b)]:.10g}" for b in regions]
        lines.append(f"{a}\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"
