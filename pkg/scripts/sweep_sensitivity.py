#!/usr/bin/env python3
"""Sensitivity sweep over one training dimension on the synthetic scene.

Supported dimensions and their default grids:
    ratio   0.05 0.1 0.2 0.3    (training fraction)
    patch   5 7 9               (window size; also resizes the model input)
    batch   32 64 128

Each grid point trains a fresh model on its own split, so runtime scales
with the grid. Results land in <out>/sweep.json.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from chmffn.data import synth_scene
from chmffn.model import ModelConfig
from chmffn.training import SWEEP_DIMENSIONS, TrainConfig, sweep


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dim", required=True, choices=sorted(SWEEP_DIMENSIONS))
    p.add_argument("--values", nargs="+", default=None, help="override the default grid")
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--scene-seed", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/sweep")
    return p.parse_args()


def main():
    args = parse_args()
    scene = synth_scene(20, 20, 8, 2, 0.01, args.scene_seed)
    model_cfg = ModelConfig(
        bands=8, patch=5, base_channels=4, heads=2, attention_reduction=4, seed=args.seed
    )
    cfg = TrainConfig(
        model=model_cfg, lr=5e-3, epochs=args.epochs, batch=32, ratio=0.3, patch=5, seed=args.seed
    )
    values = args.values
    if values is not None:
        caster = float if args.dim == "ratio" else int
        values = [caster(v) for v in values]
    os.makedirs(args.out, exist_ok=True)
    table = sweep(scene, args.dim, values, cfg, out_path=os.path.join(args.out, "sweep.json"))
    for value, row in table.items():
        m = row["metrics"]
        print(f"{args.dim}={value}: oa={m['oa']:.4f} kc={m['kc_standard']:.4f} f1={m['f1']:.4f}")
    print(f"\ntable written to {os.path.join(args.out, 'sweep.json')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
