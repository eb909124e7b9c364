"""Command-line entry point: synth, train, eval, gradcam, gradcheck.

Exit codes: 0 success, 1 usage/configuration, 2 data or format error,
3 numerical failure (NaN/divergence), 4 gradcheck failure. Every command
writes a run manifest into its output directory before doing work;
outputs are pure functions of (inputs, config, seed).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C
from . import data as D
from . import interpret as I
from . import train as TR
from .backbone import ConfigurationError
from .gradcheck import run_suites
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .tensor import Tensor
from .train import DivergenceError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_GRADCHECK = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


class CliError(Exception):
    pass


def _write_run_manifest(out_dir: Path, command: str, seed, config_snapshot: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    text = (
        f"command = {command}\n"
        f"seed = {seed}\n"
        f"output_dir = {out_dir}\n"
        "--- resolved config ---\n" + config_snapshot
    )
    (out_dir / "run_manifest.txt").write_text(text)


def _make_octant_atlas(dims: tuple[int, int, int]) -> np.ndarray:
    """Eight-region integer atlas splitting the volume at each midplane."""
    d, h, w = dims
    zz, yy, xx = np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij")
    return 1 + 4 * (zz >= d // 2) + 2 * (yy >= h // 2) + (xx >= w // 2)


def cmd_synth(args) -> int:
    spec = C.build_phantom_spec(C.load_config_file(args.spec))
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, "synth", spec.seed, C.format_phantom_spec(spec))
    volumes = D.generate_phantoms(spec, args.n)
    entries = []
    for vol in volumes:
        name = f"{vol.subject_id}.vox"
        D.save_volume(out_dir / name, vol)
        entries.append((vol.subject_id, name, vol.label, vol.group_tag))
    D.write_manifest(out_dir / "manifest.tsv", entries)
    atlas = _make_octant_atlas(spec.dims)
    D.save_volume(
        out_dir / "atlas.vox",
        D.Volume("atlas", Tensor(atlas.astype(float)[None]), 0, "atlas"),
    )
    print(f"wrote {len(volumes)} volumes + atlas to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    sections = C.load_config_file(args.config)
    cfg = C.build_train_config(sections)
    if args.planes:
        cfg = replace(cfg, model=replace(cfg.model, active_planes=C._parse_planes(args.planes)))
    if args.attention:
        cfg = replace(cfg, model=replace(cfg.model, attention_variant=args.attention))
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, "train", cfg.seed, C.format_train_config(cfg))
    dataset = D.load_dataset(args.data)
    if not dataset:
        raise D.VolumeFormatError(f"empty dataset manifest {args.data}")
    transfer = [load_checkpoint(p) for p in args.transfer] if args.transfer else None
    result = TR.cross_validate(dataset, cfg, transfer_from=transfer)
    rows = []
    for fold, (params, logs, metrics) in enumerate(
        zip(result.fold_params, result.fold_logs, result.per_fold)
    ):
        save_checkpoint(out_dir / f"fold{fold}.ckpt", params)
        (out_dir / f"fold{fold}.log").write_text(TR.format_epoch_log(logs))
        rows.append((str(fold), metrics))
    rows.append(("mean", result.mean))
    report = TR.format_metrics_report(rows)
    (out_dir / "metrics.tsv").write_text(report)
    print(report, end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = load_checkpoint(args.ckpt)
    dataset = D.load_dataset(args.data)
    if not dataset:
        raise D.VolumeFormatError(f"empty dataset manifest {args.data}")
    metrics = TR.evaluate(params, dataset)
    report = TR.format_metrics_report([("all", metrics)])
    if args.out:
        Path(args.out).write_text(report)
    print(report, end="")
    return EXIT_OK


def cmd_gradcam(args) -> int:
    params = load_checkpoint(args.ckpt)
    dataset = D.load_dataset(args.data)
    atlas_vol = D.load_volume(args.atlas)
    atlas = I.Atlas(np.rint(atlas_vol.voxels.data[0]).astype(int))
    out_dir = Path(args.out)
    _write_run_manifest(
        out_dir,
        "gradcam",
        0,
        f"ckpt = {args.ckpt}\natlas = {args.atlas}\nk = {args.k}\n"
        f"target_class = {args.target_class}\npost_attention = {args.post_attention}\n",
    )
    regions = atlas.regions()
    k = min(args.k, len(regions))
    if k < args.k:
        print(f"note: atlas has only {len(regions)} regions, using k={k}")
    reports = []
    for vol in dataset:
        if vol.dims != atlas.labels.shape:
            raise D.VolumeFormatError(
                f"{vol.subject_id}: dims {vol.dims} do not match atlas {atlas.labels.shape}"
            )
        rep = I.gradcam(params, vol.voxels, args.target_class, post_attention=args.post_attention)
        rep.region_scores = I.region_aggregate(rep.cam, atlas)
        rep.top_k = I.top_regions(rep.region_scores, k)
        reports.append(rep)
        D.save_volume(
            out_dir / f"cam_{vol.subject_id}.vox",
            D.Volume(vol.subject_id, Tensor(rep.cam[None]), args.target_class, vol.group_tag),
        )
        (out_dir / f"regions_{vol.subject_id}.tsv").write_text(
            I.format_region_scores(rep.region_scores)
            + "# top regions: " + ",".join(str(r) for r in rep.top_k) + "\n"
        )
    if len(reports) >= 3:
        corr = I.region_correlation(reports, regions)
        (out_dir / "correlation.tsv").write_text(I.format_correlation(corr, regions))
    else:
        print("note: fewer than 3 subjects, correlation matrix skipped")
    print(f"wrote {len(reports)} CAM reports to {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suites(scale=args.scale)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_GRADCHECK


def build_parser() -> _Parser:
    parser = _Parser(prog="multiplane", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic phantom dataset")
    p.add_argument("--spec", required=True, help="phantom spec file ([phantom] section)")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True, help="volumes per class")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="cross-validated training")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--transfer", nargs="*", default=None, help="candidate init checkpoints")
    p.add_argument("--out", required=True)
    p.add_argument("--planes", default=None, help="comma list overriding [model] planes")
    p.add_argument("--attention", default=None, help="attention variant override")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcam", help="CAM volumes, region scores, correlations")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--atlas", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--target-class", type=int, default=1)
    p.add_argument("--post-attention", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gradcam)

    p = sub.add_parser("gradcheck", help="finite-difference verification suites")
    p.add_argument("--scale", choices=("tiny", "small"), default="tiny")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (D.VolumeFormatError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CliError, C.ConfigError, ConfigurationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
