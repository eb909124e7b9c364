#!/usr/bin/env python3
"""Train a single fold on phantoms and write CAM volumes + region reports.

    python3 scripts/run_gradcam_demo.py --work /tmp/camdemo
"""

import argparse
import sys
from pathlib import Path

from multiplane.cli import main as cli


def run(argv):
    print("+ multiplane " + " ".join(argv))
    rc = cli(argv)
    if rc != 0:
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--work", required=True)
    ap.add_argument("--n", type=int, default=6, help="phantoms per class")
    ap.add_argument("--epochs", type=int, default=20)
    args = ap.parse_args()

    work = Path(args.work)
    work.mkdir(parents=True, exist_ok=True)
    (work / "phantom.cfg").write_text(
        "[phantom]\n"
        "dims = 64,64,64\n"
        "lesion_center = 16,16,16\n"
        "lesion_radius = 6.0\n"
        "lesion_intensity_delta = 0.8\n"
        "noise_sigma = 0.1\n"
        "seed = 0\n"
    )
    (work / "train.cfg").write_text(
        "[train]\n"
        f"epochs = {args.epochs}\n"
        "folds = 2\n"
        "\n"
        "[loss]\n"
        "ramp_start_epoch = 4\n"
        "ramp_steps = 4\n"
    )
    run(["synth", "--spec", str(work / "phantom.cfg"), "--out", str(work / "data"),
         "--n", str(args.n)])
    run(["train", "--data", str(work / "data" / "manifest.tsv"),
         "--config", str(work / "train.cfg"), "--out", str(work / "cv")])
    run(["gradcam", "--ckpt", str(work / "cv" / "fold0.ckpt"),
         "--data", str(work / "data" / "manifest.tsv"),
         "--atlas", str(work / "data" / "atlas.vox"),
         "--k", "8", "--out", str(work / "cam")])


if __name__ == "__main__":
    main()
