#!/usr/bin/env python3
"""Synthesize a phantom cohort, train with 5-fold CV, and evaluate.

Everything goes through the CLI so the run is reproducible from the
artifacts alone (run_manifest.txt in each output directory).

    python3 scripts/run_surrogate.py --work /tmp/surrogate [--n 12] [--dim 64]
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
    ap.add_argument("--n", type=int, default=12, help="phantoms per class")
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()

    work = Path(args.work)
    work.mkdir(parents=True, exist_ok=True)
    c = args.dim // 4
    (work / "phantom.cfg").write_text(
        "[phantom]\n"
        f"dims = {args.dim},{args.dim},{args.dim}\n"
        f"lesion_center = {c},{c},{c}\n"
        f"lesion_radius = {args.dim / 10.67:.1f}\n"
        "lesion_intensity_delta = 0.8\n"
        "noise_sigma = 0.1\n"
        "seed = 0\n"
    )
    (work / "train.cfg").write_text(
        "[train]\n"
        f"epochs = {args.epochs}\n"
        "folds = 5\n"
        "\n"
        "[loss]\n"
        "ramp_start_epoch = 5\n"
        "ramp_steps = 5\n"
    )
    run(["synth", "--spec", str(work / "phantom.cfg"), "--out", str(work / "data"),
         "--n", str(args.n)])
    run(["train", "--data", str(work / "data" / "manifest.tsv"),
         "--config", str(work / "train.cfg"), "--out", str(work / "cv")])
    run(["eval", "--ckpt", str(work / "cv" / "fold0.ckpt"),
         "--data", str(work / "data" / "manifest.tsv")])


if __name__ == "__main__":
    main()
