"""Run configuration: nested dataclasses, strict dict/YAML loading, content hashing.

Every tunable lives here so a single JSON-serializable tree pins down a run.
Unknown keys are rejected on load; the config hash is the sha256 of the
canonical JSON encoding and is embedded in checkpoints and dataset
fingerprints so artifacts can refuse mismatched configs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import yaml


@dataclass
class ModelConfig:
    """Toy morphable face model and renderer."""

    grid_rows: int = 15
    grid_cols: int = 17
    n_shape: int = 8
    n_expression: int = 8
    n_landmarks: int = 17
    resolution: int = 64
    # Splat width in pixels at the 64 px reference resolution; scales linearly.
    splat_sigma: float = 1.5
    splat_gain: float = 0.12
    coverage_threshold: float = 0.02
    # Camera scale for a face-crop framing: the head fills roughly a third of
    # the frame area, mirroring the landmark-cropped inputs the encoders are
    # meant to consume.  Small values leave too few face pixels for the
    # coefficient regression to get any purchase.
    base_scale: float = 0.28
    ambient: float = 0.30
    basis_seed: int = 11
    # Deformation per unit coefficient.  Orthonormal basis columns spread a
    # unit of coefficient across every vertex of the mesh, which at a 64 px
    # render would move each vertex a fraction of a pixel; the gain rescales
    # the columns so coefficients produce visible motion.
    basis_gain: float = 3.0


@dataclass
class NetworkConfig:
    encoder_widths: tuple[int, ...] = (16, 32, 64, 128)
    generator_stem: int = 32
    generator_depth: int = 64
    generator_blocks: int = 4
    discriminator_widths: tuple[int, ...] = (16, 32, 64)
    mapper_hidden: int = 256
    mapper_layers: int = 6


@dataclass
class LossWeights:
    """Weights of the generator-side objective terms.

    The seven named weights multiply the cycle self-supervision terms; the
    adversarial generator terms carry the explicit ``adversarial`` weight
    (1.0 reproduces the published objective, where they enter unweighted).
    """

    reconstruction: float = 10.0
    identity: float = 1.5
    mask_consistency: float = 0.5
    occluded_expression: float = 1.0
    occluded_shape: float = 0.1
    landmark: float = 2.5
    rig_transform: float = 0.1
    adversarial: float = 1.0

    def as_mapping(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


@dataclass
class PretrainConfig:
    """Supervised warm-up of the occlusion-free encoder on rendered frames."""

    images: int = 4096
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    loss_threshold: float = 0.01


@dataclass
class Phase1Config:
    """Adversarial cycle training schedule (three stages)."""

    stage_epochs: tuple[int, ...] = (10, 5, 5)
    stage_retention: tuple[float, ...] = (0.5, 0.1, 0.01)
    learning_rate: float = 2e-4
    weight_decay: float = 1e-3
    batch_size: int = 1
    log_every: int = 25
    crop_scale: float = 0.9
    sharpen_max: float = 0.5
    flip_prob: float = 0.5


@dataclass
class Phase2Config:
    """Expression <-> muscle-activity mapping networks."""

    learning_rate: float = 1e-3
    batch_size: int = 512
    epochs: int = 200
    folds: int = 5


@dataclass
class EmgConfig:
    sample_rate: float = 4096.0
    frame_rate: float = 30.0
    envelope_cutoff_hz: float = 4.0
    filter_order: int = 4


@dataclass
class WorldConfig:
    """Synthetic data world: identities, task protocol, repetition counts."""

    name: str = "phase1"
    participants: int = 8
    tasks: tuple[str, ...] = ("smile_open", "brow_raise")
    repetitions: int = 3
    snippet_seconds: float = 1.4
    world_seed: int = 101


@dataclass
class MetricConfig:
    frechet_dim: int = 64
    frechet_seed: int = 77


@dataclass
class RunConfig:
    seed: int = 0
    run_id: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)
    networks: NetworkConfig = field(default_factory=NetworkConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    phase1: Phase1Config = field(default_factory=Phase1Config)
    phase2: Phase2Config = field(default_factory=Phase2Config)
    emg: EmgConfig = field(default_factory=EmgConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)


_SECTION_TYPES = {
    "model": ModelConfig,
    "networks": NetworkConfig,
    "weights": LossWeights,
    "pretrain": PretrainConfig,
    "phase1": Phase1Config,
    "phase2": Phase2Config,
    "emg": EmgConfig,
    "world": WorldConfig,
    "metrics": MetricConfig,
}


def _coerce(value: Any, target_type: Any, key: str) -> Any:
    """Coerce a loaded value to the declared field type, strictly enough to
    catch typos but loose enough for YAML's int-where-float-expected."""
    origin = getattr(target_type, "__origin__", None)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"config field '{key}' expects a sequence, got {value!r}")
        inner = target_type.__args__[0]
        return tuple(_coerce(v, inner, key) for v in value)
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"config field '{key}' expects a number, got {value!r}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"config field '{key}' expects an integer, got {value!r}")
        return int(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ValueError(f"config field '{key}' expects a string, got {value!r}")
        return value
    return value


def _section_from_dict(cls: type, data: dict[str, Any], prefix: str) -> Any:
    if not isinstance(data, dict):
        raise ValueError(f"config section '{prefix}' must be a mapping, got {data!r}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValueError(f"unknown config key(s) in '{prefix}': {', '.join(unknown)}")
    kwargs = {}
    for name in data:
        kwargs[name] = _coerce(data[name], _FIELD_TYPES[cls][name], f"{prefix}.{name}")
    return cls(**kwargs)


# Resolved (non-string) field types per dataclass; dataclasses under
# `from __future__ import annotations` store types as strings.
def _resolve_types() -> dict[type, dict[str, Any]]:
    import typing

    out: dict[type, dict[str, Any]] = {}
    for cls in list(_SECTION_TYPES.values()) + [RunConfig]:
        out[cls] = typing.get_type_hints(cls)
    return out


_FIELD_TYPES = _resolve_types()


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    """Build a RunConfig from a nested dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ValueError(f"config root must be a mapping, got {data!r}")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        if name in _SECTION_TYPES:
            kwargs[name] = _section_from_dict(_SECTION_TYPES[name], value, name)
        else:
            kwargs[name] = _coerce(value, _FIELD_TYPES[RunConfig][name], name)
    return RunConfig(**kwargs)


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    """Dataclass tree -> plain dict (tuples become lists)."""

    def convert(obj: Any) -> Any:
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        return obj

    return convert(config)


def canonical_json(config: RunConfig) -> str:
    return json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))


def config_hash(config: RunConfig) -> str:
    """sha256 hex digest of the canonical JSON encoding."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(config: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_override(config: RunConfig, dotted_key: str, raw_value: str) -> RunConfig:
    """Apply one ``section.field=value`` override, returning a new config.

    Values are parsed as YAML so numbers, booleans, and lists work unquoted.
    """
    data = config_to_dict(config)
    parts = dotted_key.split(".")
    node = data
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ValueError(f"unknown config key '{dotted_key}'")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ValueError(f"unknown config key '{dotted_key}'")
    node[parts[-1]] = yaml.safe_load(raw_value)
    return config_from_dict(data)
