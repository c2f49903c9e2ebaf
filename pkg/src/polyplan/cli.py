"""Command-line entry points: generate / train / eval / infer / baseline / render.

Exit codes: 0 success, 2 configuration or usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .baseline import run_baseline
from .config import ConfigError, ExperimentConfig, load_config
from .data import (
    AnnotationError,
    load_annotations,
    load_density,
    save_annotations,
    save_density,
)
from .evaluation import EvalThresholds, evaluate_scenes
from .render import save_render
from .training import (
    build_scene,
    build_synthetic_dataset,
    evaluate_model,
    load_checkpoint,
    predict_plans,
    train,
)


def _scene_stem(index: int) -> str:
    return f"scene_{index:05d}"


def cmd_generate(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .data import generate_synthetic

    names = []
    for i in range(args.count):
        density, plan = generate_synthetic(args.seed + i, config.synthetic)
        stem = _scene_stem(i)
        save_density(density, out / f"{stem}.density.png")
        save_annotations(plan, out / f"{stem}.json")
        names.append(stem)
    (out / "corpus.json").write_text(
        json.dumps({"scenes": names, "seed": args.seed, "count": args.count}, indent=1)
    )
    print(f"wrote {args.count} scenes to {out}")
    return 0


def _load_corpus(directory, model_cfg):
    """Scenes from a generated corpus directory (density + annotations)."""
    from .data import pad_targets
    from .training import Scene, _line_targets

    directory = Path(directory)
    index_path = directory / "corpus.json"
    if not index_path.exists():
        raise ConfigError(f"no corpus.json in {directory}")
    index = json.loads(index_path.read_text())
    scenes = []
    for stem in index["scenes"]:
        density = load_density(directory / f"{stem}.density.png")
        plan = load_annotations(directory / f"{stem}.json")
        include_lines = model_cfg.variant == "joint"
        targets = pad_targets(
            plan.normalized(), model_cfg.num_rooms, model_cfg.num_corners, include_lines=include_lines
        )
        line_targets = None
        if model_cfg.variant in ("lines_two_level", "lines_single_level"):
            line_targets = _line_targets(plan, model_cfg.num_line_queries)
        scenes.append(Scene(density=density, plan=plan, targets=targets, line_targets=line_targets))
    return scenes


def cmd_train(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config.train.seed = args.seed
    if args.data:
        scenes = _load_corpus(args.data, config.model)
    else:
        scenes = build_synthetic_dataset(args.synthetic_count, config.train.seed + 1000, config.synthetic, config.model)
    val_scenes = None
    if args.val_data:
        val_scenes = _load_corpus(args.val_data, config.model)
    elif args.val_count:
        val_scenes = build_synthetic_dataset(args.val_count, config.train.seed + 900_000, config.synthetic, config.model)
    result = train(
        config,
        scenes,
        val_scenes=val_scenes,
        out_dir=args.out,
        log_fn=lambda rec: print(json.dumps(rec)),
    )
    print(f"best val room F1 {result.best_room_f1:.4f} at epoch {result.best_epoch}")
    return 0


def _annotation_files(path: Path):
    if path.is_dir():
        candidates = sorted(p for p in path.glob("*.json") if p.name != "corpus.json")
        if not candidates:
            raise ConfigError(f"no annotation files in {path}")
        return candidates
    return [path]


def cmd_eval(args) -> int:
    gt_files = _annotation_files(Path(args.gt))
    pred_files = _annotation_files(Path(args.pred))
    if len(gt_files) != len(pred_files):
        raise ConfigError(
            f"groundtruth has {len(gt_files)} scenes but prediction has {len(pred_files)}"
        )
    thresholds = EvalThresholds(
        room_iou=args.theta_room, corner_px=args.theta_corner, angle_deg=args.theta_angle,
        line_px=args.theta_line, line_mode=args.line_mode,
    )
    pairs = [(load_annotations(g), load_annotations(p)) for g, p in zip(gt_files, pred_files)]
    report = evaluate_scenes(pairs, thresholds)
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def _density_files(path: Path):
    if path.is_dir():
        files = sorted(list(path.glob("*.density.png")) + list(path.glob("*.npy")))
        if not files:
            raise ConfigError(f"no density maps in {path}")
        return files
    return [path]


def cmd_infer(args) -> int:
    model, config, _ = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    import torch

    for f in _density_files(Path(args.input)):
        density = load_density(f)
        with torch.no_grad():
            outputs = model(torch.as_tensor(density, dtype=torch.float32))
        from .model import decode_to_floorplan

        plan = decode_to_floorplan(outputs, model.cfg, threshold=args.threshold)
        stem = f.name.replace(".density.png", "").replace(".npy", "")
        save_annotations(plan, out / f"{stem}.json")
    print(f"inferred {len(_density_files(Path(args.input)))} scenes into {out}")
    return 0


def cmd_baseline(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _density_files(Path(args.input))
    for f in files:
        density = load_density(f)
        plan = run_baseline(density, epsilon=args.epsilon, close_kernel=args.kernel)
        stem = f.name.replace(".density.png", "").replace(".npy", "")
        save_annotations(plan, out / f"{stem}.json")
    print(f"vectorized {len(files)} scenes into {out}")
    return 0


def cmd_render(args) -> int:
    plan = load_annotations(args.plan)
    save_render(plan, args.out)
    print(f"rendered {args.plan} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyplan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic scene corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--data", help="corpus directory (default: generate on the fly)")
    p.add_argument("--val-data")
    p.add_argument("--synthetic-count", type=int, default=500)
    p.add_argument("--val-count", type=int, default=50)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score predictions against groundtruth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    p.add_argument("--theta-room", type=float, default=0.5)
    p.add_argument("--theta-corner", type=float, default=10.0)
    p.add_argument("--theta-angle", type=float, default=5.0)
    p.add_argument("--theta-line", type=float, default=10.0)
    p.add_argument("--line-mode", choices=("endpoints", "midpoint"), default="endpoints")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="reconstruct floorplans with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("baseline", help="learning-free reconstruction")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=3.0)
    p.add_argument("--kernel", type=int, default=3)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("render", help="draw a floorplan as SVG/PNG")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.fn(args)
    except (ConfigError, AnnotationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
