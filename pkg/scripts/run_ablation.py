#!/usr/bin/env python3
"""Directional ablation: full three-plane model vs axial-only baseline.

Trains both configurations with 5-fold CV over several seeds and prints
the per-seed mean CV accuracies plus a run-level sign count.

    python3 scripts/run_ablation.py [--n 30] [--dim 32] [--seeds 5] [--epochs 3]
"""

import argparse

from multiplane.data import PhantomSpec, generate_phantoms
from multiplane.losses import LossConfig
from multiplane.model import ModelConfig
from multiplane.train import TrainConfig, cross_validate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=30, help="phantoms per class")
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=3)
    args = ap.parse_args()

    c = args.dim // 4
    spec = PhantomSpec(dims=(args.dim,) * 3, lesion_center_class1=(c, c, c),
                       lesion_radius=args.dim / 10.67)
    dataset = generate_phantoms(spec, args.n)
    loss = LossConfig(ramp_start_epoch=1, ramp_steps=2)

    wins = 0
    print("seed\tfull\taxial")
    for seed in range(args.seeds):
        accs = {}
        for name, planes in (("full", ("axial", "coronal", "sagittal")),
                             ("axial", ("axial",))):
            cfg = TrainConfig(epochs=args.epochs, seed=seed, loss=loss,
                              model=ModelConfig(active_planes=planes),
                              use_augment=False)
            accs[name] = cross_validate(dataset, cfg).mean.acc
        wins += accs["full"] >= accs["axial"]
        print(f"{seed}\t{accs['full']:.4f}\t{accs['axial']:.4f}")
    print(f"full >= axial in {wins}/{args.seeds} runs")


if __name__ == "__main__":
    main()
