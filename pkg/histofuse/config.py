"""Run configuration: per-kind defaults, JSON validation and environment knobs.

A run config is one JSON object. Every key is optional except ``model``;
missing hyperparameters fall back to :data:`MODEL_DEFAULTS` for that model
kind, so ``{"model": "fusion_binary"}`` trains the final binary configuration.
Unknown keys are rejected at every nesting level with their dotted path.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .data import DEFAULT_RESCALE, MAGNIFICATIONS, AugmentationConfig
from .errors import ConfigError
from .models import MODEL_KINDS, BackboneConfig
from .optim import OPTIMIZER_RULES, TrainConfig
from .pso import SwarmConfig


RUN_SUMMARY_SCHEMA_VERSION = "histofuse_run_summary_v1"
RUN_CONFIG_SCHEMA_ID = "histofuse_run_config_v1"
MAGNIFICATION_CHOICES: tuple[int | str, ...] = (*MAGNIFICATIONS, "merged")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


# ---- per-kind defaults ----


@dataclass(frozen=True)
class ModelDefaults:
    kind: str
    task: str
    input_size: int
    batch_size: int
    epochs: int
    optimizer: str
    lr: float
    scheduler: bool
    early_stopping: bool
    augmentation: bool

    def to_dict(self) -> dict:
        return asdict(self)


_REGISTRY: dict[str, ModelDefaults] = {
    "baseline": ModelDefaults(
        kind="baseline",
        task="binary",
        input_size=128,
        batch_size=32,
        epochs=20,
        optimizer="adam",
        lr=1e-4,
        scheduler=False,
        early_stopping=False,
        augmentation=False,
    ),
    "pso_binary": ModelDefaults(
        kind="pso_binary",
        task="binary",
        input_size=128,
        batch_size=16,
        epochs=30,
        optimizer="adam",
        lr=1e-4,
        scheduler=True,
        early_stopping=True,
        augmentation=True,
    ),
    "fusion_binary": ModelDefaults(
        kind="fusion_binary",
        task="binary",
        input_size=128,
        batch_size=32,
        epochs=50,
        optimizer="adam",
        lr=1e-4,
        scheduler=True,
        early_stopping=True,
        augmentation=True,
    ),
    "fusion_benign": ModelDefaults(
        kind="fusion_benign",
        task="benign",
        input_size=128,
        batch_size=32,
        epochs=50,
        optimizer="adam",
        lr=1e-4,
        scheduler=True,
        early_stopping=True,
        augmentation=True,
    ),
    "fusion_malignant": ModelDefaults(
        kind="fusion_malignant",
        task="malignant",
        input_size=128,
        batch_size=32,
        epochs=50,
        optimizer="adam",
        lr=1e-4,
        scheduler=True,
        early_stopping=True,
        augmentation=True,
    ),
    "subclass_initial": ModelDefaults(
        kind="subclass_initial",
        task="benign",
        input_size=256,
        batch_size=32,
        epochs=30,
        optimizer="adam",
        lr=1e-4,
        scheduler=False,
        early_stopping=False,
        augmentation=False,
    ),
}

MODEL_DEFAULTS = _REGISTRY


def get_model_defaults(kind: str) -> ModelDefaults:
    key = str(kind or "").strip()
    if key not in _REGISTRY:
        raise KeyError(f"Unknown model kind: {kind}")
    return _REGISTRY[key]


def list_model_defaults() -> list[ModelDefaults]:
    return list(_REGISTRY.values())


# ---- config blocks ----


@dataclass(frozen=True)
class SplitConfig:
    val_fraction: float = 0.2
    per_magnification: bool = False
    magnification: int | str | None = None
    balance_target: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"split.val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.magnification is not None and self.magnification not in MAGNIFICATION_CHOICES:
            raise ConfigError(f"split.magnification must be one of {list(MAGNIFICATION_CHOICES)}, got {self.magnification}")

    def resolved_magnification(self, default: int | str) -> int | str:
        return default if self.magnification is None else self.magnification


@dataclass(frozen=True)
class SyntheticConfig:
    """Generated texture classes used in place of a manifest."""

    num_classes: int = 2
    per_class: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if not 2 <= self.num_classes <= 8:
            raise ConfigError(f"synthetic.num_classes must be in [2, 8], got {self.num_classes}")
        if self.per_class < 2:
            raise ConfigError(f"synthetic.per_class must be >= 2, got {self.per_class}")


@dataclass(frozen=True)
class PathsConfig:
    manifest: str | None = None
    output_dir: str = "histofuse_out"


_MODEL_ARG_FIELDS: dict[str, dict[str, dict]] = {
    "baseline": {
        "filters": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3},
        "kernel": {"type": "integer", "minimum": 1},
    },
    "pso_binary": {"dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
    "fusion_binary": {"dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
    "fusion_benign": {"dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
    "fusion_malignant": {"dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
    "subclass_initial": {"task": {"type": "string", "enum": ["benign", "malignant"]}},
}

_TASK_FROM_ARGS = ("subclass_initial",)
_USES_BACKBONE = ("pso_binary", "fusion_binary", "fusion_benign", "fusion_malignant")


# ---- schema ----

_TYPE_NAMES = {
    "integer": "an integer",
    "number": "a number",
    "boolean": "a boolean",
    "string": "a string",
    "object": "an object",
    "array": "an array",
    "null": "null",
}

_AUGMENTATION_FIELDS = {
    "rescale": {"type": "number", "exclusiveMinimum": 0},
    "width_shift": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "height_shift": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "shear": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "zoom": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "horizontal_flip": {"type": "boolean"},
    "fill_mode": {"type": "string", "enum": ["nearest"]},
    "seed": {"type": "integer", "minimum": 0},
}

_SPLIT_FIELDS = {
    "val_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "per_magnification": {"type": "boolean"},
    "magnification": {"type": ["integer", "string"], "enum": list(MAGNIFICATION_CHOICES)},
    "balance_target": {"type": ["integer", "null"], "minimum": 1},
}

_BACKBONE_FIELDS = {
    "stem_filters": {"type": "integer", "minimum": 1},
    "layers_per_block": {"type": "integer", "minimum": 1},
    "growth_rate": {"type": "integer", "minimum": 1},
    "compression": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "dense_connectivity": {"type": "boolean"},
    "frozen": {"type": "boolean"},
}

_PSO_FIELDS = {
    "swarm_size": {"type": "integer", "minimum": 2},
    "iterations": {"type": "integer", "minimum": 1},
    "inertia": {"type": "number", "minimum": 0},
    "cognitive": {"type": "number", "minimum": 0},
    "social": {"type": "number", "minimum": 0},
    "seed": {"type": "integer", "minimum": 0},
    "velocity_clamp": {"type": "number", "exclusiveMinimum": 0},
}

_SYNTHETIC_FIELDS = {
    "num_classes": {"type": "integer", "minimum": 2, "maximum": 8},
    "per_class": {"type": "integer", "minimum": 2},
    "seed": {"type": "integer", "minimum": 0},
}

_PATHS_FIELDS = {
    "manifest": {"type": ["string", "null"]},
    "output_dir": {"type": "string"},
}


def _object(properties: Mapping[str, dict], nullable: bool = False) -> dict:
    return {
        "type": ["object", "null"] if nullable else "object",
        "properties": dict(properties),
        "additionalProperties": False,
    }


RUN_CONFIG_SCHEMA: dict = {
    "$id": RUN_CONFIG_SCHEMA_ID,
    "type": "object",
    "required": ["model"],
    "additionalProperties": False,
    "properties": {
        "model": {"type": "string", "enum": list(MODEL_KINDS)},
        "input_size": {"type": "integer", "minimum": 8},
        "batch_size": {"type": "integer", "minimum": 1},
        "optimizer": {"type": "string", "enum": list(OPTIMIZER_RULES)},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "epochs": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "scheduler": {"type": "boolean"},
        "early_stopping": {"type": "boolean"},
        "augmentation": _object(_AUGMENTATION_FIELDS, nullable=True),
        "split": _object(_SPLIT_FIELDS),
        "backbone": _object(_BACKBONE_FIELDS),
        "model_args": {"type": "object", "description": "builder arguments; allowed keys depend on model"},
        "pso": _object(_PSO_FIELDS),
        "synthetic": _object(_SYNTHETIC_FIELDS, nullable=True),
        "paths": _object(_PATHS_FIELDS),
    },
}


def _matches_type(value: Any, name: str) -> bool:
    if name == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if name == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if name == "boolean":
        return isinstance(value, bool)
    if name == "string":
        return isinstance(value, str)
    if name == "object":
        return isinstance(value, dict)
    if name == "array":
        return isinstance(value, list)
    return value is None


def _check_value(value: Any, rule: Mapping[str, Any], path: str) -> None:
    types = rule.get("type", [])
    types = [types] if isinstance(types, str) else list(types)
    if types and not any(_matches_type(value, t) for t in types):
        expected = " or ".join(_TYPE_NAMES[t] for t in types)
        raise ConfigError(f"{path}: expected {expected}, got {json.dumps(value)}")
    if value is None:
        return
    if "enum" in rule and value not in rule["enum"]:
        raise ConfigError(f"{path}: must be one of {rule['enum']}, got {json.dumps(value)}")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if "minimum" in rule and value < rule["minimum"]:
            raise ConfigError(f"{path}: must be >= {rule['minimum']}, got {value}")
        if "maximum" in rule and value > rule["maximum"]:
            raise ConfigError(f"{path}: must be <= {rule['maximum']}, got {value}")
        if "exclusiveMinimum" in rule and value <= rule["exclusiveMinimum"]:
            raise ConfigError(f"{path}: must be > {rule['exclusiveMinimum']}, got {value}")
        if "exclusiveMaximum" in rule and value >= rule["exclusiveMaximum"]:
            raise ConfigError(f"{path}: must be < {rule['exclusiveMaximum']}, got {value}")
    if isinstance(value, list):
        if "minItems" in rule and len(value) < rule["minItems"]:
            raise ConfigError(f"{path}: needs at least {rule['minItems']} items, got {len(value)}")
        if "maxItems" in rule and len(value) > rule["maxItems"]:
            raise ConfigError(f"{path}: allows at most {rule['maxItems']} items, got {len(value)}")
        for index, item in enumerate(value):
            _check_value(item, rule.get("items", {}), f"{path}[{index}]")
    if isinstance(value, dict) and "properties" in rule:
        _check_object(value, rule["properties"], path)


def _check_object(payload: Mapping[str, Any], properties: Mapping[str, dict], path: str = "") -> None:
    for key in payload:
        if key not in properties:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown key")
    for key, value in payload.items():
        _check_value(value, properties[key], f"{path + '.' if path else ''}{key}")


# ---- RunConfig ----


@dataclass(frozen=True)
class RunConfig:
    model: str
    input_size: int
    batch_size: int
    optimizer: str
    lr: float
    epochs: int
    seed: int = 0
    scheduler: bool = True
    early_stopping: bool = True
    augmentation: AugmentationConfig | None = None
    split: SplitConfig = field(default_factory=SplitConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    model_args: dict = field(default_factory=dict)
    pso: SwarmConfig = field(default_factory=SwarmConfig)
    synthetic: SyntheticConfig | None = None
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self) -> None:
        if self.batch_size < 2 and self.trains_batchnorm:
            raise ConfigError(f"batch_size: {self.model} trains batch normalization and needs batch_size >= 2")

    @property
    def trains_batchnorm(self) -> bool:
        return self.model.startswith("fusion_") or (self.model == "pso_binary" and not self.backbone.frozen)

    @property
    def task(self) -> str:
        if self.model in _TASK_FROM_ARGS:
            return str(self.model_args.get("task", get_model_defaults(self.model).task))
        return get_model_defaults(self.model).task

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.output_dir)

    @property
    def rescale(self) -> float:
        return self.augmentation.rescale if self.augmentation is not None else DEFAULT_RESCALE

    @property
    def manifest_path(self) -> Path | None:
        return Path(self.paths.manifest) if self.paths.manifest else None

    def build_args(self) -> dict:
        """Keyword arguments for :func:`histofuse.models.build_model`."""
        args: dict[str, Any] = {"input_size": self.input_size}
        if self.model in _USES_BACKBONE:
            args["backbone"] = self.backbone.to_dict()
        args.update(self.model_args)
        return args

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            optimizer=self.optimizer,
            lr=self.lr,
            scheduler=self.scheduler,
            early_stopping=self.early_stopping,
            augmentation=self.augmentation,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _block(cls: type, payload: Mapping[str, Any] | None) -> Any:
    known = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in dict(payload or {}).items() if k in known})


def parse_run_config(payload: Any, base_dir: str | Path | None = None) -> RunConfig:
    """Validate a decoded JSON document and fill per-kind defaults.

    Relative ``paths`` entries are resolved against *base_dir* (the config
    file's directory when loaded with :func:`load_run_config`).
    """
    if not isinstance(payload, dict):
        raise ConfigError("run config must be a JSON object")
    if "model" not in payload:
        raise ConfigError("model: required key missing")
    _check_object(payload, RUN_CONFIG_SCHEMA["properties"])
    kind = payload["model"]
    defaults = get_model_defaults(kind)
    model_args = dict(payload.get("model_args") or {})
    _check_object(model_args, _MODEL_ARG_FIELDS[kind], "model_args")

    augmentation: AugmentationConfig | None = None
    if "augmentation" in payload:
        if payload["augmentation"] is not None:
            augmentation = _block(AugmentationConfig, payload["augmentation"])
    elif defaults.augmentation:
        augmentation = AugmentationConfig()

    synthetic = None
    if payload.get("synthetic") is not None:
        synthetic = _block(SyntheticConfig, payload["synthetic"])

    paths_payload = dict(payload.get("paths") or {})
    if base_dir is not None:
        base = Path(base_dir)
        for key in ("manifest", "output_dir"):
            value = paths_payload.get(key)
            if value and not Path(value).is_absolute():
                paths_payload[key] = str(base / value)
    paths = _block(PathsConfig, paths_payload)
    if synthetic is None and paths.manifest is None:
        raise ConfigError("paths.manifest: required unless a synthetic block is given")

    return RunConfig(
        model=kind,
        input_size=int(payload.get("input_size", defaults.input_size)),
        batch_size=int(payload.get("batch_size", defaults.batch_size)),
        optimizer=str(payload.get("optimizer", defaults.optimizer)),
        lr=float(payload.get("lr", defaults.lr)),
        epochs=int(payload.get("epochs", defaults.epochs)),
        seed=int(payload.get("seed", 0)),
        scheduler=bool(payload.get("scheduler", defaults.scheduler)),
        early_stopping=bool(payload.get("early_stopping", defaults.early_stopping)),
        augmentation=augmentation,
        split=_block(SplitConfig, payload.get("split")),
        backbone=_block(BackboneConfig, {"frozen": kind == "pso_binary", **dict(payload.get("backbone") or {})}),
        model_args=model_args,
        pso=_block(SwarmConfig, payload.get("pso")),
        synthetic=synthetic,
        paths=paths,
    )


def load_run_config(path: str | Path) -> RunConfig:
    config_path = Path(path)
    try:
        payload = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{config_path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    config = parse_run_config(payload, base_dir=config_path.resolve().parent)
    if config.manifest_path is not None and not config.manifest_path.is_file():
        raise ConfigError(f"paths.manifest: file not found: {config.manifest_path}")
    return config


# ---- environment ----


def _to_int_env(name: str, default: int) -> int:
    try:
        return int(str(os.getenv(name) or "").strip() or default)
    except Exception:
        return int(default)


def worker_threads() -> int:
    """``HISTOFUSE_THREADS``, default 1, never below 1."""
    return max(1, _to_int_env("HISTOFUSE_THREADS", 1))


def env_log_level(default: str = "WARNING") -> str:
    value = str(os.getenv("HISTOFUSE_LOG_LEVEL") or "").strip().upper()
    return value if value in LOG_LEVELS else default


def configure_logging(level: str | None = None) -> None:
    """Install the single root handler used by the command line."""
    chosen = (level or env_log_level()).upper()
    logging.basicConfig(
        level=getattr(logging, chosen, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


__all__ = [
    "LOG_LEVELS",
    "MAGNIFICATION_CHOICES",
    "MODEL_DEFAULTS",
    "ModelDefaults",
    "PathsConfig",
    "RUN_CONFIG_SCHEMA",
    "RUN_SUMMARY_SCHEMA_VERSION",
    "RunConfig",
    "SplitConfig",
    "SyntheticConfig",
    "configure_logging",
    "env_log_level",
    "get_model_defaults",
    "list_model_defaults",
    "load_run_config",
    "parse_run_config",
    "worker_threads",
]
