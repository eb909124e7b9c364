"""Config file parsing: schema enforcement, round-trips, builders."""

import pytest

from multiplane.config import (
    ConfigError,
    build_phantom_spec,
    build_train_config,
    format_phantom_spec,
    format_train_config,
    load_config_file,
    parse_config_text,
)
from multiplane.train import TrainConfig

GOOD = """\
[model]
planes = axial,coronal
attention_variant = maxavg_mlp
kan_hidden = 8

[train]
epochs = 7
lr_initial = 0.01
use_augment = false

[loss]
lambda = 0.3
mode = step
"""


def test_parse_and_build():
    cfg = build_train_config(parse_config_text(GOOD))
    assert cfg.epochs == 7
    assert cfg.lr_initial == 0.01
    assert cfg.use_augment is False
    assert cfg.model.active_planes == ("axial", "coronal")
    assert cfg.model.attention_variant == "maxavg_mlp"
    assert cfg.model.kan_hidden == 8
    assert cfg.loss.lam == 0.3
    assert cfg.loss.mode == "step"
    # untouched keys keep their defaults
    assert cfg.batch_size == 3
    assert cfg.model.head_dim == 64


def test_defaults_from_empty_config():
    cfg = build_train_config(parse_config_text(""))
    assert cfg == TrainConfig()


def test_comments_and_blank_lines_ignored():
    text = "# top comment\n\n[train]\nepochs = 3  # trailing comment\n"
    got = parse_config_text(text)
    assert got == {"train": {"epochs": 3}}


def test_unknown_section_rejected_with_line_number():
    with pytest.raises(ConfigError, match=":1"):
        parse_config_text("[optimizer]\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("[train]\nlearning_rate = 0.1\n")


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError, match="outside"):
        parse_config_text("epochs = 3\n")


def test_malformed_line_rejected():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_text("[train]\nepochs\n")


def test_bad_value_reports_key_and_line():
    with pytest.raises(ConfigError, match="epochs"):
        parse_config_text("[train]\nepochs = three\n")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config_text("[train]\nuse_augment = maybe\n")
    with pytest.raises(ConfigError, match="plane"):
        parse_config_text("[model]\nplanes = axial,oblique\n")


def test_train_config_roundtrip_through_snapshot():
    cfg = build_train_config(parse_config_text(GOOD))
    snapshot = format_train_config(cfg)
    again = build_train_config(parse_config_text(snapshot))
    assert again == cfg


def test_phantom_spec_roundtrip():
    text = """\
[phantom]
dims = 16,16,16
lesion_center = 8,8,8
lesion_radius = 3.5
noise_sigma = 0.05
seed = 4
"""
    spec = build_phantom_spec(parse_config_text(text))
    assert spec.dims == (16, 16, 16)
    assert spec.lesion_center_class1 == (8, 8, 8)
    assert spec.lesion_radius == 3.5
    again = build_phantom_spec(parse_config_text(format_phantom_spec(spec)))
    assert again == spec


def test_load_config_file_names_source(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[nope]\n")
    with pytest.raises(ConfigError, match="bad.cfg"):
        load_config_file(p)


def test_invalid_built_values_propagate():
    # schema-valid text can still violate dataclass invariants
    with pytest.raises(ValueError):
        build_train_config(parse_config_text("[train]\nepochs = 0\n"))
    with pytest.raises(ValueError):
        build_train_config(parse_config_text("[loss]\nlambda = -1.0\n"))
