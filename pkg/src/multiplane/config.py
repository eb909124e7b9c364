"""Line-oriented `key = value` configuration files with [section] headers.

Unknown sections and keys are hard errors (no silent defaults for
misspellings). The same format is used for run-manifest snapshots, so a
resolved configuration can be re-run bit-for-bit.
"""

from __future__ import annotations


from pathlib import Path

from .losses import LossConfig
from .model import ModelConfig, PLANES
from .data import PhantomSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in s.split(","))


def _parse_planes(s: str) -> tuple[str, ...]:
    planes = tuple(p.strip() for p in s.split(","))
    for p in planes:
        if p not in PLANES:
            raise ConfigError(f"unknown plane {p!r}")
    return planes


# section -> key -> converter
SCHEMA = {
    "model": {
        "planes": _parse_planes,
        "attention_variant": str,
        "kan_hidden": int,
        "grid_size": int,
        "spline_degree": int,
        "head_dim": int,
    },
    "train": {
        "epochs": int,
        "batch_size": int,
        "lr_initial": float,
        "lr_decay": float,
        "lr_decay_every": int,
        "momentum": float,
        "seed": int,
        "folds": int,
        "use_augment": _parse_bool,
        "augment_flip": _parse_bool,
        "select_best": _parse_bool,
    },
    "loss": {
        "lambda": float,
        "ramp_start_epoch": int,
        "ramp_steps": int,
        "mode": str,
    },
    "phantom": {
        "dims": _parse_ints,
        "lesion_center": _parse_ints,
        "lesion_radius": float,
        "lesion_intensity_delta": float,
        "noise_sigma": float,
        "seed": int,
    },
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict]:
    out: dict[str, dict] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside any [section]")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{section}]")
        try:
            out[section][key] = SCHEMA[section][key](value)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {e}") from None
    return out


def load_config_file(path) -> dict[str, dict]:
    return parse_config_text(Path(path).read_text(), source=str(path))


def build_train_config(sections: dict[str, dict]) -> TrainConfig:
    m = dict(sections.get("model", {}))
    if "planes" in m:
        m["active_planes"] = m.pop("planes")
    model = ModelConfig(**m)
    lo = dict(sections.get("loss", {}))
    if "lambda" in lo:
        lo["lam"] = lo.pop("lambda")
    loss = LossConfig(**lo)
    return TrainConfig(model=model, loss=loss, **sections.get("train", {}))


def build_phantom_spec(sections: dict[str, dict]) -> PhantomSpec:
    p = dict(sections.get("phantom", {}))
    if "lesion_center" in p:
        p["lesion_center_class1"] = p.pop("lesion_center")
    return PhantomSpec(**p)


def format_train_config(cfg: TrainConfig) -> str:
    """Resolved-config snapshot in the same parseable format."""
    m, lo = cfg.model, cfg.loss
    lines = [
        "[model]",
        f"planes = {','.join(m.active_planes)}",
        f"attention_variant = {m.attention_variant}",
        f"kan_hidden = {m.kan_hidden}",
        f"grid_size = {m.grid_size}",
        f"spline_degree = {m.spline_degree}",
        f"head_dim = {m.head_dim}",
        "",
        "[train]",
        f"epochs = {cfg.epochs}",
        f"batch_size = {cfg.batch_size}",
        f"lr_initial = {cfg.lr_initial!r}",
        f"lr_decay = {cfg.lr_decay!r}",
        f"lr_decay_every = {cfg.lr_decay_every}",
        f"momentum = {cfg.momentum!r}",
        f"seed = {cfg.seed}",
        f"folds = {cfg.folds}",
        f"use_augment = {cfg.use_augment}",
        f"augment_flip = {cfg.augment_flip}",
        f"select_best = {cfg.select_best}",
        "",
        "[loss]",
        f"lambda = {lo.lam!r}",
        f"ramp_start_epoch = {lo.ramp_start_epoch}",
        f"ramp_steps = {lo.ramp_steps}",
        f"mode = {lo.mode}",
    ]
    return "\n".join(lines) + "\n"


def format_phantom_spec(spec: PhantomSpec) -> str:
    return "\n".join(
        [
            "[phantom]",
            f"dims = {','.join(str(d) for d in spec.dims)}",
            f"lesion_center = {','.join(str(c) for c in spec.lesion_center_class1)}",
            f"lesion_radius = {spec.lesion_radius!r}",
            f"lesion_intensity_delta = {spec.lesion_intensity_delta!r}",
            f"noise_sigma = {spec.noise_sigma!r}",
            f"seed = {spec.seed}",
        ]
    ) + "\n"
