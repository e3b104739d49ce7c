"""Command-line interface.

Subcommands: train, eval, ablate, sweep, synth, render. Exit codes: 0 on
success, 2 for configuration errors, 3 for data errors, 4 for numeric
failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from .data import load_gt, load_scene, stratified_split, synth_scene, write_scene
from .errors import ConfigError, DataError, NumericError
from .metrics import emit_report, format_report, render_change_map, save_change_map
from .training import (
    SWEEP_DIMENSIONS,
    TrainConfig,
    ablate,
    evaluate,
    load_checkpoint,
    sweep,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_train_config(path: str, bands: int) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    raw.setdefault("model", {})
    if not isinstance(raw["model"], dict):
        raise ConfigError("config 'model' section must be a JSON object")
    raw["model"].setdefault("bands", bands)
    cfg = TrainConfig.from_dict(raw)
    if cfg.model.bands != bands:
        raise ConfigError(f"config expects {cfg.model.bands} bands but the scene has {bands}")
    return cfg


def _scene_from_args(args):
    return load_scene(args.t1, args.t2, args.gt)


def _cmd_train(args) -> int:
    scene = _scene_from_args(args)
    cfg = _load_train_config(args.config, scene.t1.bands)
    if args.checkpoint_every is not None:
        raw = cfg.to_dict()
        raw["checkpoint_every"] = args.checkpoint_every
        cfg = TrainConfig.from_dict(raw)
    os.makedirs(args.out, exist_ok=True)
    model, history, split = train(scene, cfg, out_dir=args.out)
    report, cmap = evaluate(model, scene, split, normalize=cfg.normalize, eval_batch=cfg.eval_batch)
    emit_report(
        report,
        os.path.join(args.out, "report.json"),
        extra={"eval_pixels": "test_split", "map_includes_train_pixels": True},
    )
    save_change_map(cmap, os.path.join(args.out, "change_map.png"))
    print(format_report(report))
    return EXIT_OK


def _cmd_eval(args) -> int:
    scene = _scene_from_args(args)
    model, manifest = load_checkpoint(args.ckpt)
    if model.config.bands != scene.t1.bands:
        raise DataError(f"checkpoint expects {model.config.bands} bands but the scene has {scene.t1.bands}")
    normalize = bool(manifest.get("normalize", True))
    split = stratified_split(scene.gt, args.ratio, args.seed)
    report, cmap = evaluate(model, scene, split, normalize=normalize)
    os.makedirs(args.out, exist_ok=True)
    emit_report(
        report,
        os.path.join(args.out, "report.json"),
        extra={"eval_pixels": "test_split", "map_includes_train_pixels": True},
    )
    save_change_map(cmap, os.path.join(args.out, "change_map.png"))
    print(format_report(report))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    scene = _scene_from_args(args)
    cfg = _load_train_config(args.config, scene.t1.bands)
    os.makedirs(args.out, exist_ok=True)
    table = ablate(scene, cfg, out_path=os.path.join(args.out, "ablation.json"))
    for variant, row in table.items():
        m = row["metrics"]
        print(f"{variant}: oa={m['oa']:.4f} kc={m['kc_standard']:.4f} f1={m['f1']:.4f}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    scene = _scene_from_args(args)
    cfg = _load_train_config(args.config, scene.t1.bands)
    values: Optional[list] = args.values
    if values is not None:
        caster = float if args.dim == "ratio" else int
        values = [caster(v) for v in values]
    os.makedirs(args.out, exist_ok=True)
    table = sweep(scene, args.dim, values, cfg, out_path=os.path.join(args.out, "sweep.json"))
    for value, row in table.items():
        m = row["metrics"]
        print(f"{args.dim}={value}: oa={m['oa']:.4f} kc={m['kc_standard']:.4f} f1={m['f1']:.4f}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    scene = synth_scene(args.height, args.width, args.bands, args.rects, args.sigma, args.seed)
    paths = write_scene(scene, args.out)
    print(json.dumps(paths, sort_keys=True))
    return EXIT_OK


def _cmd_render(args) -> int:
    pred = load_gt(args.pred)
    gt = load_gt(args.gt)
    if pred.shape != gt.shape:
        raise DataError(f"prediction {pred.shape} and gt {gt.shape} differ")
    cmap = render_change_map(pred, gt)
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    save_change_map(cmap, args.out)
    counts = cmap.counts()
    print(json.dumps({"tp": counts.tp, "tn": counts.tn, "fp": counts.fp, "fn": counts.fn}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chmffn",
        description="Bi-temporal hyperspectral change detection: train, evaluate, ablate, sweep, and synthesize scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scene_args(p):
        p.add_argument("--t1", required=True, help="date-1 cube header (JSON)")
        p.add_argument("--t2", required=True, help="date-2 cube header (JSON)")
        p.add_argument("--gt", required=True, help="ground-truth raster header (JSON)")

    p = sub.add_parser("train", help="train a model and report test metrics")
    add_scene_args(p)
    p.add_argument("--config", required=True, help="train config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--checkpoint-every", type=int, default=None, help="also checkpoint every K epochs")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a scene")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    add_scene_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ratio", type=float, default=0.3, help="train ratio defining the held-out pixels")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate the module ablation grid")
    add_scene_args(p)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sweep", help="sensitivity sweep over ratio, patch, or batch")
    add_scene_args(p)
    p.add_argument("--config", required=True)
    p.add_argument("--dim", required=True, choices=sorted(SWEEP_DIMENSIONS))
    p.add_argument("--values", nargs="+", default=None, help="values to sweep (defaults per dimension)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("synth", help="generate a seeded synthetic scene")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--bands", type=int, required=True)
    p.add_argument("--rects", type=int, required=True, help="number of change rectangles")
    p.add_argument("--sigma", type=float, required=True, help="additive noise sigma on date 2")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory for t1/t2/gt")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("render", help="color-code a prediction raster against ground truth")
    p.add_argument("--pred", required=True, help="prediction raster header (u8, 0/1)")
    p.add_argument("--gt", required=True, help="ground-truth raster header")
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=_cmd_render)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
