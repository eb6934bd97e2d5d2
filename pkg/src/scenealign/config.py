"""Experiment configuration: nested dataclasses, strict JSON loading, fingerprints.

Config files are JSON; unknown keys anywhere in the tree are rejected before
any work starts. Numeric experiment settings live here — CLI flags only carry
paths, seeds, and toggles.
"""

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from .checkpoint import fingerprint_config
from .errors import ConfigError
from .scene_data.generator import GeneratorConfig, SceneTypeSpec


@dataclass(frozen=True)
class RendererConfig:
    resolution: Tuple[int, int] = (224, 224)
    elevation_deg: float = 45.0
    splat_radius_px: float = 2.0


@dataclass(frozen=True)
class TextEncoderConfig:
    max_len: int = 77
    width: int = 128
    layers: int = 2
    heads: int = 4
    word_dim: int = 512
    embed_dim: int = 512


@dataclass(frozen=True)
class ImageEncoderConfig:
    patch_size: int = 16
    width: int = 128
    layers: int = 2
    heads: int = 4
    embed_dim: int = 512
    resolution: Tuple[int, int] = (224, 224)


@dataclass(frozen=True)
class SceneEncoderConfig:
    num_proposals: int = 32
    feature_dim: int = 128
    point_hidden: int = 64
    neighbor_radius: float = 0.3
    neighbor_k: int = 8
    group_radius: float = 0.3
    group_k: int = 16
    num_classes: int = 8
    transformer_layers: int = 1
    heads: int = 4
    embed_dim: int = 512
    min_box_size: float = 0.05
    match_positive_m: float = 0.3
    match_negative_m: float = 0.6

    def __post_init__(self):
        if self.num_proposals < 1:
            raise ConfigError("scene_encoder: num_proposals must be >= 1")
        if self.match_negative_m < self.match_positive_m:
            raise ConfigError("scene_encoder: negative match radius below positive radius")


@dataclass(frozen=True)
class PretrainSettings:
    tau: float = 0.07
    learnable_tau: bool = False
    alpha: float = 0.5
    beta: float = 0.5
    num_views: int = 5
    use_text_loss: bool = True
    use_image_loss: bool = True
    use_cosine_variant: bool = False
    iterations: int = 300
    batch_size: int = 16
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    augment: bool = True
    point_budget: int = 1024
    encoder_mode: str = "reference"  # "reference" or "adapter"
    adapter_path: Optional[str] = None
    train_text_encoder: bool = False
    train_image_encoder: bool = False
    checkpoint_every: int = 0  # 0: only final

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"pretrain: tau must be positive, got {self.tau}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("pretrain: alpha and beta must be >= 0")
        if self.num_views < 1:
            raise ConfigError("pretrain: num_views must be >= 1")
        if self.encoder_mode not in ("reference", "adapter"):
            raise ConfigError(f"pretrain: unknown encoder_mode {self.encoder_mode!r}")


@dataclass(frozen=True)
class VqaSettings:
    hidden_dim: int = 256
    heads: int = 4
    fusion_layers: int = 2
    epochs: int = 4
    steps_per_epoch: int = 40
    batch_size: int = 8
    learning_rate: float = 5e-4
    weight_decay: float = 1e-5
    lr_decay_factor: float = 0.2
    lr_decay_epoch: int = 15
    min_answer_count: int = 1
    augment: bool = True
    point_budget: int = 1024
    freeze_scene_encoder: bool = False


@dataclass(frozen=True)
class SqaSettings:
    hidden_dim: int = 256
    heads: int = 4
    epochs: int = 4
    steps_per_epoch: int = 40
    batch_size: int = 8
    learning_rate: float = 5e-4
    weight_decay: float = 1e-5
    lr_decay_factor: float = 0.2
    lr_decay_epoch: int = 15
    min_answer_count: int = 1
    augment: bool = True
    point_budget: int = 1024
    freeze_scene_encoder: bool = False
    rotation_sign_invariant: bool = True  # min over q/-q in the rotation loss


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    jobs: int = 1
    data: GeneratorConfig = field(default_factory=GeneratorConfig)
    renderer: RendererConfig = field(default_factory=RendererConfig)
    text_encoder: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    image_encoder: ImageEncoderConfig = field(default_factory=ImageEncoderConfig)
    scene_encoder: SceneEncoderConfig = field(default_factory=SceneEncoderConfig)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)
    vqa: VqaSettings = field(default_factory=VqaSettings)
    sqa: SqaSettings = field(default_factory=SqaSettings)


_SCALARS = (int, float, bool, str)


def _convert(value, hint, path):
    origin = typing.get_origin(hint)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected object, got {type(value).__name__}")
        return _from_dict(hint, value, path)
    if origin in (tuple, Tuple):
        args = typing.get_args(hint)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected array")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_convert(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if origin is typing.Union:  # Optional[...]
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _convert(value, args[0], path)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported config field type {hint}")


def _generator_from_dict(raw: dict, path: str) -> GeneratorConfig:
    data = dict(raw)
    kwargs = {}
    if "colors" in data:
        colors = data.pop("colors")
        if not isinstance(colors, dict):
            raise ConfigError(f"{path}.colors: expected object of name -> [r, g, b]")
        kwargs["colors"] = tuple((str(k), tuple(float(x) for x in v)) for k, v in colors.items())
    if "scene_types" in data:
        specs = []
        for i, item in enumerate(data.pop("scene_types")):
            extra = set(item) - {"name", "shapes", "object_count"}
            if extra:
                raise ConfigError(f"{path}.scene_types[{i}]: unknown keys {sorted(extra)}")
            specs.append(
                SceneTypeSpec(
                    name=str(item["name"]),
                    shapes=tuple(item["shapes"]),
                    object_count=tuple(int(x) for x in item["object_count"]),
                )
            )
        kwargs["scene_types"] = tuple(specs)
    simple = {
        f.name: f for f in dataclasses.fields(GeneratorConfig) if f.name not in ("colors", "scene_types")
    }
    hints = typing.get_type_hints(GeneratorConfig)
    for key in list(data):
        if key not in simple:
            raise ConfigError(f"{path}: unknown key {key!r}")
        kwargs[key] = _convert(data.pop(key), hints[key], f"{path}.{key}")
    return GeneratorConfig(**kwargs)


def _from_dict(cls, raw: dict, path: str):
    if cls is GeneratorConfig:
        return _generator_from_dict(raw, path)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {
        name: _convert(raw[name], hints[name], f"{path}.{name}" if path else name)
        for name in names
        if name in raw
    }
    return cls(**kwargs)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return _from_dict(ExperimentConfig, raw, "")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def config_to_dict(config) -> dict:
    return dataclasses.asdict(config)


def encoder_arch_fingerprint(config: ExperimentConfig) -> str:
    """Fingerprint of everything that fixes pre-training tensor shapes/semantics."""
    return fingerprint_config(
        {
            "scene_encoder": config_to_dict(config.scene_encoder),
            "text_encoder": config_to_dict(config.text_encoder),
            "image_encoder": config_to_dict(config.image_encoder),
        }
    )


def vqa_arch_fingerprint(config: ExperimentConfig) -> str:
    return fingerprint_config(
        {
            "scene_encoder": config_to_dict(config.scene_encoder),
            "text_encoder": config_to_dict(config.text_encoder),
            "hidden_dim": config.vqa.hidden_dim,
            "heads": config.vqa.heads,
            "fusion_layers": config.vqa.fusion_layers,
        }
    )


def sqa_arch_fingerprint(config: ExperimentConfig) -> str:
    return fingerprint_config(
        {
            "scene_encoder": config_to_dict(config.scene_encoder),
            "text_encoder": config_to_dict(config.text_encoder),
            "hidden_dim": config.sqa.hidden_dim,
            "heads": config.sqa.heads,
        }
    )


def write_config(path: Path, config: ExperimentConfig) -> None:
    with open(path, "w") as f:
        json.dump(config_to_dict(config), f, indent=2, sort_keys=True)
        f.write("\n")
