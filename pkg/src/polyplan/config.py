"""Experiment configuration: dataclasses plus TOML/JSON file loading."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import NUM_ROOM_TYPES, SyntheticConfig

VARIANTS = ("rooms", "joint", "lines_two_level", "lines_single_level")
ROOM_QUERY_MODES = ("two_level", "single_level")
ATTN_MASK_MODES = ("inter_polygon", "intra_polygon")


class ConfigError(ValueError):
    """Invalid configuration value or file."""


@dataclass
class ModelConfig:
    variant: str = "rooms"
    map_size: int = 256
    channels: int = 256
    ffn_dim: int = 1024
    num_heads: int = 8
    enc_layers: int = 6
    dec_layers: int = 6
    num_points: int = 4
    num_rooms: int = 20
    num_corners: int = 40
    num_line_queries: int = 50
    num_room_types: int = NUM_ROOM_TYPES
    room_query_mode: str = "two_level"
    attn_mask_mode: str = "inter_polygon"
    backbone_channels: tuple = (32, 64, 128, 256)
    dropout: float = 0.0
    validity_threshold: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.room_query_mode not in ROOM_QUERY_MODES:
            raise ConfigError(f"unknown room_query_mode {self.room_query_mode!r}")
        if self.attn_mask_mode not in ATTN_MASK_MODES:
            raise ConfigError(f"unknown attn_mask_mode {self.attn_mask_mode!r}")
        if self.map_size % 64 != 0:
            raise ConfigError(f"map_size must be divisible by 64, got {self.map_size}")
        if self.channels % self.num_heads != 0:
            raise ConfigError("channels must be divisible by num_heads")
        if isinstance(self.backbone_channels, list):
            self.backbone_channels = tuple(self.backbone_channels)
        if len(self.backbone_channels) != 4:
            raise ConfigError("backbone_channels needs exactly 4 stages")

    @property
    def num_semantic_classes(self) -> int:
        """Valid (non-empty) semantic classes of the polygon decoder."""
        if self.variant == "joint":
            return self.num_room_types + 2  # rooms + door + window
        return self.num_room_types

    @staticmethod
    def for_variant(variant: str, **overrides) -> "ModelConfig":
        """Variant defaults: the joint model triples its polygon budget."""
        if variant == "joint" and "num_rooms" not in overrides:
            overrides["num_rooms"] = 70
        return ModelConfig(variant=variant, **overrides)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 2e-4
    weight_decay: float = 1e-4
    lr_drop_factor: float = 0.1
    lr_drop_fraction: float = 0.2  # final fraction of epochs at reduced rate
    grad_clip_norm: float = 0.1
    seed: int = 0
    lambda_cls: float = 2.0
    lambda_coord: float = 5.0
    lambda_ras: float = 1.0
    lambda_room: float = 1.0
    raster_resolution: int = 64
    raster_temperature: float = 0.7
    deep_supervision: bool = True
    use_mask_cost: bool = False  # ablation: replace coord matching cost
    eval_every: int = 10
    num_workers: int = 0

    def lr_at_epoch(self, epoch: int) -> float:
        """Step schedule: the final lr_drop_fraction of epochs run at
        learning_rate * lr_drop_factor."""
        boundary = int(round(self.epochs * (1.0 - self.lr_drop_fraction)))
        return self.learning_rate * (self.lr_drop_factor if epoch >= boundary else 1.0)


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build_section(cls, values: dict, path: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - fields
    if unknown:
        raise ConfigError(f"unknown key(s) in [{path}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{path}]: {e}") from e


def config_from_dict(raw: dict) -> ExperimentConfig:
    for key in raw:
        if key not in ("model", "train", "synthetic"):
            raise ConfigError(f"unknown top-level section {key!r}")
    model_values = dict(raw.get("model", {}))
    variant = model_values.pop("variant", "rooms")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if "num_rooms" in model_values or variant != "joint":
        model = _build_section(ModelConfig, {"variant": variant, **model_values}, "model")
    else:
        model = ModelConfig.for_variant(variant, **model_values)
    return ExperimentConfig(
        model=model,
        train=_build_section(TrainConfig, raw.get("train", {}), "train"),
        synthetic=_build_section(SyntheticConfig, raw.get("synthetic", {}), "synthetic"),
    )


def load_config(path) -> ExperimentConfig:
    """Read an experiment config from a .toml or .json file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".toml":
        with open(path, "rb") as f:
            try:
                raw = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"{path}: {e}") from e
    elif path.suffix == ".json":
        with open(path) as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: {e}") from e
    else:
        raise ConfigError(f"config must be .toml or .json, got {path.suffix!r}")
    return config_from_dict(raw)
