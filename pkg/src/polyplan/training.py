"""Optimization loop, checkpointing, and experiment drivers.

Training supervises every decoder layer's predictions (deep supervision) by
matching each one against the padded targets and summing the weighted losses;
the room-type cross-entropy is applied to the final layer. The best checkpoint
by validation room F1 is retained.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, ExperimentConfig, ModelConfig, SyntheticConfig, TrainConfig
from .data import (
    DOOR_OFFSET,
    Floorplan,
    PaddedTargets,
    generate_synthetic,
)
from .evaluation import EvalThresholds, evaluate_scenes
from .losses import matched_total_loss, room_type_loss
from .model import FloorplanModel, decode_to_floorplan
from .data import pad_targets

CHECKPOINT_VERSION = 1


class TrainingAborted(RuntimeError):
    """Raised when training hits a non-finite loss."""


@dataclass
class Scene:
    density: np.ndarray
    plan: Floorplan
    targets: PaddedTargets
    line_targets: PaddedTargets | None = None


def _line_targets(plan: Floorplan, max_lines: int) -> PaddedTargets:
    """Padded 2-vertex targets for a separate line decoder (0=door, 1=window)."""
    norm = plan.normalized()
    entities = [(d, 0) for d in norm.doors] + [(w, 1) for w in norm.windows]
    if len(entities) > max_lines:
        raise ValueError(f"scene has {len(entities)} lines but the decoder has {max_lines} queries")
    coords = np.zeros((max_lines, 2, 2), dtype=np.float64)
    labels = np.zeros((max_lines, 2), dtype=np.float64)
    types = np.full(max_lines, -1, dtype=np.int64)
    for m, (pts, t) in enumerate(entities):
        coords[m] = pts
        labels[m] = 1.0
        types[m] = t
    return PaddedTargets(
        coords=coords, labels=labels, lengths=[2] * len(entities), gt_count=len(entities), types=types
    )


def build_scene(seed: int, syn_cfg: SyntheticConfig, model_cfg: ModelConfig) -> Scene:
    density, plan = generate_synthetic(seed, syn_cfg)
    norm = plan.normalized()
    include_lines = model_cfg.variant == "joint"
    targets = pad_targets(norm, model_cfg.num_rooms, model_cfg.num_corners, include_lines=include_lines)
    line_targets = None
    if model_cfg.variant in ("lines_two_level", "lines_single_level"):
        line_targets = _line_targets(plan, model_cfg.num_line_queries)
    return Scene(density=density, plan=plan, targets=targets, line_targets=line_targets)


def build_synthetic_dataset(count: int, base_seed: int, syn_cfg: SyntheticConfig, model_cfg: ModelConfig):
    return [build_scene(base_seed + i, syn_cfg, model_cfg) for i in range(count)]


def _scene_loss(outputs, scene: Scene, train_cfg: TrainConfig, batch_index: int):
    """Summed loss for one scene across supervised layers, plus breakdown."""
    layers = outputs["rooms"] if train_cfg.deep_supervision else outputs["rooms"][-1:]
    total = None
    parts_sum = {"cls": 0.0, "coord": 0.0, "ras": 0.0, "room": 0.0, "line": 0.0}
    for pred in layers:
        loss, parts, assignment = matched_total_loss(
            scene.targets,
            pred.coords[batch_index],
            pred.probs[batch_index],
            lambda_cls=train_cfg.lambda_cls,
            lambda_coord=train_cfg.lambda_coord,
            lambda_ras=train_cfg.lambda_ras,
            resolution=train_cfg.raster_resolution,
            temperature=train_cfg.raster_temperature,
            use_mask_cost=train_cfg.use_mask_cost,
        )
        total = loss if total is None else total + loss
        for k in ("cls", "coord", "ras"):
            parts_sum[k] += parts[k]
    last = outputs["rooms"][-1]
    _, _, last_assignment = matched_total_loss(
        scene.targets,
        last.coords[batch_index].detach(),
        last.probs[batch_index],
        lambda_cls=train_cfg.lambda_cls,
        lambda_coord=train_cfg.lambda_coord,
        lambda_ras=0.0,
        use_mask_cost=train_cfg.use_mask_cost,
    )
    room_term = room_type_loss(
        scene.targets.types, scene.targets.gt_count, last.type_logits[batch_index], last_assignment
    )
    total = total + train_cfg.lambda_room * room_term
    parts_sum["room"] = float(room_term.detach())
    if outputs.get("lines") is not None and scene.line_targets is not None:
        line_layers = outputs["lines"] if train_cfg.deep_supervision else outputs["lines"][-1:]
        for pred in line_layers:
            loss, _, assignment = matched_total_loss(
                scene.line_targets,
                pred.coords[batch_index],
                pred.probs[batch_index],
                lambda_cls=train_cfg.lambda_cls,
                lambda_coord=train_cfg.lambda_coord,
                lambda_ras=0.0,
            )
            total = total + loss
            parts_sum["line"] += float(loss.detach())
        line_term = room_type_loss(
            scene.line_targets.types,
            scene.line_targets.gt_count,
            outputs["lines"][-1].type_logits[batch_index],
            assignment,
        )
        total = total + train_cfg.lambda_room * line_term
    return total, parts_sum


def batch_loss(model: FloorplanModel, scenes: list[Scene], train_cfg: TrainConfig):
    """Mean over the batch of per-scene summed losses."""
    densities = torch.as_tensor(
        np.stack([s.density for s in scenes]), dtype=next(model.parameters()).dtype
    )
    outputs = model(densities)
    total = None
    parts_acc = {"cls": 0.0, "coord": 0.0, "ras": 0.0, "room": 0.0, "line": 0.0}
    for i, scene in enumerate(scenes):
        loss, parts = _scene_loss(outputs, scene, train_cfg, i)
        total = loss if total is None else total + loss
        for k in parts_acc:
            parts_acc[k] += parts[k]
    total = total / len(scenes)
    for k in parts_acc:
        parts_acc[k] /= len(scenes)
    return total, parts_acc


def predict_plans(model: FloorplanModel, scenes: list[Scene], batch_size: int = 8, threshold=None):
    """Decode floorplans for a list of scenes (no gradients)."""
    model.eval()
    plans = []
    with torch.no_grad():
        for start in range(0, len(scenes), batch_size):
            chunk = scenes[start : start + batch_size]
            densities = torch.as_tensor(
                np.stack([s.density for s in chunk]), dtype=next(model.parameters()).dtype
            )
            outputs = model(densities)
            for i in range(len(chunk)):
                plans.append(decode_to_floorplan(outputs, model.cfg, scene=i, threshold=threshold))
    return plans


def evaluate_model(model: FloorplanModel, scenes: list[Scene], thresholds: EvalThresholds | None = None):
    preds = predict_plans(model, scenes)
    return evaluate_scenes([(s.plan, p) for s, p in zip(scenes, preds)], thresholds)


def save_checkpoint(path, model: FloorplanModel, config: ExperimentConfig, extra: dict | None = None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, expected_model_config: ModelConfig | None = None):
    """Rebuild the model from a checkpoint; refuses config mismatches."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    saved = payload["config"]
    model_cfg = ModelConfig(**saved["model"])
    if expected_model_config is not None and dataclasses.asdict(expected_model_config) != dataclasses.asdict(model_cfg):
        raise ConfigError("checkpoint model config does not match the requested config")
    model = FloorplanModel(model_cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    config = ExperimentConfig(
        model=model_cfg,
        train=TrainConfig(**saved["train"]),
        synthetic=SyntheticConfig(**saved["synthetic"]),
    )
    return model, config, payload["extra"]


@dataclass
class TrainResult:
    model: FloorplanModel
    history: list
    best_room_f1: float
    best_epoch: int
    checkpoint_path: str | None


def train(
    config: ExperimentConfig,
    train_scenes: list[Scene],
    val_scenes: list[Scene] | None = None,
    out_dir=None,
    log_fn=None,
    stop_fn=None,
) -> TrainResult:
    """Run the optimization loop.

    Logs one JSON line per epoch to metrics.jsonl under out_dir. Aborts on a
    non-finite loss with a diagnostic dump of the offending batch. `stop_fn`
    (epoch, history) -> bool allows early exit once a target is reached.
    """
    cfg_t = config.train
    torch.manual_seed(cfg_t.seed)
    model = FloorplanModel(config.model)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg_t.learning_rate, weight_decay=cfg_t.weight_decay
    )
    shuffle_rng = np.random.default_rng(cfg_t.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.jsonl"
        log_path.write_text("")
    history = []
    best_f1, best_epoch = -1.0, -1
    best_state = None
    checkpoint_path = str(out_dir / "best.pt") if out_dir is not None else None
    for epoch in range(cfg_t.epochs):
        lr = cfg_t.lr_at_epoch(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = shuffle_rng.permutation(len(train_scenes))
        epoch_parts = {"loss": 0.0, "cls": 0.0, "coord": 0.0, "ras": 0.0, "room": 0.0, "line": 0.0}
        num_batches = 0
        t0 = time.time()
        for start in range(0, len(order), cfg_t.batch_size):
            batch = [train_scenes[i] for i in order[start : start + cfg_t.batch_size]]
            optimizer.zero_grad()
            loss, parts = batch_loss(model, batch, cfg_t)
            if not torch.isfinite(loss):
                dump = {
                    "epoch": epoch,
                    "batch_indices": [int(i) for i in order[start : start + cfg_t.batch_size]],
                    "parts": parts,
                    "loss": float(loss.detach()),
                }
                if out_dir is not None:
                    (out_dir / "nan_dump.json").write_text(json.dumps(dump, indent=1))
                raise TrainingAborted(f"non-finite loss at epoch {epoch}: {dump}")
            loss.backward()
            if cfg_t.grad_clip_norm > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg_t.grad_clip_norm)
            optimizer.step()
            epoch_parts["loss"] += float(loss.detach())
            for k in ("cls", "coord", "ras", "room", "line"):
                epoch_parts[k] += parts[k]
            num_batches += 1
        record = {
            "epoch": epoch,
            "lr": lr,
            "seconds": round(time.time() - t0, 3),
            **{k: v / max(num_batches, 1) for k, v in epoch_parts.items()},
        }
        run_eval = val_scenes is not None and (
            (epoch + 1) % cfg_t.eval_every == 0 or epoch == cfg_t.epochs - 1
        )
        if run_eval:
            report = evaluate_model(model, val_scenes)
            model.train()
            record["val_room_f1"] = report["aggregate"]["room"]["f1"]
            record["val_corner_f1"] = report["aggregate"]["corner"]["f1"]
            record["val_angle_f1"] = report["aggregate"]["angle"]["f1"]
            if record["val_room_f1"] > best_f1:
                best_f1 = record["val_room_f1"]
                best_epoch = epoch
                best_state = {k: v.clone() for k, v in model.state_dict().items()}
        history.append(record)
        if log_path is not None:
            with open(log_path, "a") as f:
                f.write(json.dumps(record) + "\n")
        if log_fn is not None:
            log_fn(record)
        if stop_fn is not None and stop_fn(epoch, history):
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path, model, config,
            extra={"best_room_f1": best_f1, "best_epoch": best_epoch},
        )
    return TrainResult(
        model=model,
        history=history,
        best_room_f1=best_f1,
        best_epoch=best_epoch,
        checkpoint_path=checkpoint_path,
    )
