"""Run configuration: strict JSON in, strict JSON out.

Unknown keys anywhere in the tree raise :class:`ConfigError`, so typos fail
loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import os
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .byte_codecs import Transform
from .errors import ConfigError
from .model import AdaptiveSpanConfig, ModelConfig
from .objectives import LossBalanceSpec
from .training import OptimizerConfig, Regime, RegimeConfig

METRICS_ENV = "SEQ_METRICS_PATH"


@dataclass
class EncodingConfig:
    transform: str = "Baseline"
    truncate_limit: int = 4096
    codebook: Optional[str] = None

    def __post_init__(self):
        Transform(self.transform)


@dataclass
class DataConfig:
    train: Optional[str] = None
    val: Optional[str] = None
    pretrain: Optional[str] = None
    eval: Optional[str] = None


@dataclass
class OutputConfig:
    dir: str = "runs/default"
    checkpoint: Optional[str] = None
    metrics: Optional[str] = None

    def checkpoint_path(self) -> str:
        return self.checkpoint or os.path.join(self.dir, "model.bxt")

    def metrics_path(self) -> str:
        return os.environ.get(METRICS_ENV) or self.metrics or os.path.join(self.dir, "metrics.jsonl")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    regime: RegimeConfig = field(default_factory=RegimeConfig)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    init_checkpoint: Optional[str] = None
    seed: int = 0


def _unwrap_optional(tp):
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def build(cls, data: Any, where: str = ""):
    """Instantiate dataclass ``cls`` from plain JSON data, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}")
    kwargs = {}
    for key, value in data.items():
        tp = _unwrap_optional(hints[key])
        path = f"{where}.{key}" if where else key
        if dataclasses.is_dataclass(tp) and value is not None:
            kwargs[key] = build(tp, value, path)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [to_dict(x) for x in obj]
    return obj


def dumps(config: RunConfig) -> str:
    return json.dumps(to_dict(config), indent=2, sort_keys=True)


def loads(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return build(RunConfig, data)


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(data: dict, overrides: List[str]) -> dict:
    for item in overrides:
        key, value = parse_override(item)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = node[part] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"--set {key}: {part} is not an object")
            node = nxt
        node[parts[-1]] = value
    return data


def check_paths(config: RunConfig, needed: List[str]):
    for name in needed:
        if name == "init_checkpoint":
            path = config.init_checkpoint
        else:
            path = getattr(config.data, name)
        if path is None:
            raise ConfigError(f"missing required path: {name}")
        if not os.path.exists(path):
            raise ConfigError(f"path for {name} does not exist: {path}")
    for name in ("train", "val", "pretrain", "eval"):
        path = getattr(config.data, name)
        if path is not None and not os.path.exists(path):
            raise ConfigError(f"path for data.{name} does not exist: {path}")
    if config.encoding.codebook and not os.path.exists(config.encoding.codebook):
        raise ConfigError(f"codebook not found: {config.encoding.codebook}")


def load(path: Optional[str], overrides: Optional[List[str]] = None) -> RunConfig:
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    data = apply_overrides(data, overrides or [])
    return build(RunConfig, data)
