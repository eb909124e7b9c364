"""Volumes on disk, synthetic phantoms, augmentation, and CV folds.

Volume file ("VOX1"): magic, u32 version=1, three u32 dims (D,H,W), u8
label, 7 reserved bytes, then D*H*W little-endian float64 voxels in
row-major order. Dataset manifest: one `subject_id<TAB>path<TAB>label
<TAB>group` per line, '#' starts a comment.

Phantoms stand in for real scans: a smooth spherical background plus
Gaussian noise; class 1 additionally carries a spherical intensity
deficit (an atrophy analogue) at a configurable location.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

VOX_MAGIC = b"VOX1"
MAX_DIM = 1 << 24


class VolumeFormatError(ValueError):
    """Base class for volume file errors."""


class BadMagicError(VolumeFormatError):
    pass


class TruncatedError(VolumeFormatError):
    pass


class DimOverflowError(VolumeFormatError):
    pass


@dataclass
class Volume:
    subject_id: str
    voxels: Tensor  # [1, D, H, W]
    label: int
    group_tag: str = "CN"

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape[1:]


def save_volume(path, vol: Volume):
    d, h, w = vol.dims
    with open(path, "wb") as f:
        f.write(VOX_MAGIC)
        f.write(struct.pack("<IIII", 1, d, h, w))
        f.write(struct.pack("<B7x", vol.label))
        f.write(np.ascontiguousarray(vol.voxels.data, dtype="<f8").tobytes())


def load_volume(path, subject_id: str | None = None, group_tag: str = "CN") -> Volume:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != VOX_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {VOX_MAGIC!r}")
    if len(raw) < 28:
        raise TruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    version, d, h, w = struct.unpack("<IIII", raw[4:20])
    if version != 1:
        raise VolumeFormatError(f"{path}: unsupported version {version}")
    if max(d, h, w) > MAX_DIM or d * h * w > 1 << 40:
        raise DimOverflowError(f"{path}: implausible dims {(d, h, w)}")
    (label,) = struct.unpack("<B", raw[20:21])
    payload = raw[28:]
    if len(payload) != 8 * d * h * w:
        raise TruncatedError(
            f"{path}: payload holds {len(payload) // 8} voxels, header says {d * h * w}"
        )
    voxels = np.frombuffer(payload, dtype="<f8").reshape(1, d, h, w).copy()
    return Volume(subject_id or path.stem, Tensor(voxels), int(label), group_tag)


# ---------------------------------------------------------------------------
# Phantom generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 64)
    lesion_center_class1: tuple[int, int, int] = (16, 16, 16)
    lesion_radius: float = 6.0
    lesion_intensity_delta: float = 0.8
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for c, n in zip(self.lesion_center_class1, self.dims):
            if not (self.lesion_radius <= c <= n - self.lesion_radius):
                raise ValueError(
                    f"lesion sphere (center {self.lesion_center_class1}, "
                    f"radius {self.lesion_radius}) does not fit inside dims {self.dims}"
                )


def _background(dims) -> np.ndarray:
    d, h, w = dims
    zz, yy, xx = np.meshgrid(
        np.arange(d), np.arange(h), np.arange(w), indexing="ij"
    )
    center = np.array([(d - 1) / 2, (h - 1) / 2, (w - 1) / 2])
    r2 = (zz - center[0]) ** 2 + (yy - center[1]) ** 2 + (xx - center[2]) ** 2
    width = 0.35 * min(dims)
    return np.exp(-r2 / (2 * width * width))


def lesion_mask(spec: PhantomSpec, radius: float | None = None) -> np.ndarray:
    d, h, w = spec.dims
    r = spec.lesion_radius if radius is None else radius
    cz, cy, cx = spec.lesion_center_class1
    zz, yy, xx = np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij")
    return (zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def generate_phantoms(spec: PhantomSpec, n_per_class: int) -> list[Volume]:
    """Deterministic per-seed synthetic dataset, `n_per_class` volumes per class."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    bg = _background(spec.dims)
    deficit = spec.lesion_intensity_delta * lesion_mask(spec)
    groups = {0: "CN", 1: "AD"}
    volumes = []
    for label in (0, 1):
        for i in range(n_per_class):
            rng = np.random.default_rng(
                np.random.SeedSequence([spec.seed, label, i])
            )
            vox = bg + rng.normal(0.0, spec.noise_sigma, size=spec.dims)
            if label == 1:
                vox = vox - deficit
            volumes.append(
                Volume(
                    f"phantom_{groups[label].lower()}_{i:03d}",
                    Tensor(vox[None]),
                    label,
                    groups[label],
                )
            )
    return volumes


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def augment(vol: Volume, rng: np.random.Generator, flip: bool = True) -> Volume:
    """Random integer translation (zero fill) then left-right flip with p=0.5.

    Translation magnitude per axis is ceil(dim/40), i.e. 4 voxels at the
    reference 160 scale. Label and dims never change.
    """
    vox = vol.voxels.data[0]
    out = vox
    shifts = [int(rng.integers(-math.ceil(n / 40), math.ceil(n / 40) + 1)) for n in vox.shape]
    if any(shifts):
        out = np.zeros_like(vox)
        src = []
        dst = []
        for s, n in zip(shifts, vox.shape):
            if s >= 0:
                dst.append(slice(s, n))
                src.append(slice(0, n - s))
            else:
                dst.append(slice(0, n + s))
                src.append(slice(-s, n))
        out[tuple(dst)] = vox[tuple(src)]
    if flip and rng.random() < 0.5:
        out = out[:, :, ::-1]
    return Volume(vol.subject_id, Tensor(np.ascontiguousarray(out)[None]), vol.label, vol.group_tag)


def center_crop(vol: Volume, dims: tuple[int, int, int]) -> Volume:
    """Center-crop to the requested dims (all must be <= current dims)."""
    vox = vol.voxels.data[0]
    slices = []
    for want, have in zip(dims, vox.shape):
        if want > have:
            raise ValueError(f"cannot crop axis of size {have} to {want}")
        lo = (have - want) // 2
        slices.append(slice(lo, lo + want))
    out = np.ascontiguousarray(vox[tuple(slices)])
    return Volume(vol.subject_id, Tensor(out[None]), vol.label, vol.group_tag)


# ---------------------------------------------------------------------------
# Cross-validation folds
# ---------------------------------------------------------------------------

@dataclass
class FoldPlan:
    k: int
    assignments: dict[str, int]  # subject_id -> fold index

    def fold_ids(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.assignments.items() if f == fold)


def make_folds(subjects: list[Volume], k: int = 5, seed: int = 0) -> FoldPlan:
    """Label-stratified random partition, deterministic per seed."""
    if len(subjects) < k:
        raise ValueError(f"need at least {k} subjects, got {len(subjects)}")
    by_label: dict[int, list[str]] = {}
    for v in subjects:
        by_label.setdefault(v.label, []).append(v.subject_id)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    assignments: dict[str, int] = {}
    offset = 0
    for label in sorted(by_label):
        ids = sorted(by_label[label])
        if len(ids) < k:
            raise ValueError(f"class {label} has only {len(ids)} subjects, need >= {k}")
        rng.shuffle(ids)
        for i, sid in enumerate(ids):
            assignments[sid] = (offset + i) % k
        offset += len(ids)
    return FoldPlan(k, assignments)


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------

def write_manifest(path, entries: list[tuple[str, str, int, str]]):
    lines = ["# subject_id\tpath\tlabel\tgroup"]
    lines += [f"{sid}\t{p}\t{label}\t{group}" for sid, p, label, group in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[str, str, int, str]]:
    entries = []
    base = Path(path).parent
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise VolumeFormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
        sid, rel, label, group = parts
        p = Path(rel)
        if not p.is_absolute():
            p = base / p
        entries.append((sid, str(p), int(label), group))
    return entries


def load_dataset(manifest_path) -> list[Volume]:
    return [
        Volume(sid, load_volume(p).voxels, label, group)
        for sid, p, label, group in read_manifest(manifest_path)
    ]
