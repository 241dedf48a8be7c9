"""Run configuration: one YAML file drives every pipeline stage."""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from spp.datagen.config import DatagenConfig
from spp.errors import ConfigError
from spp.eval.ablation import AblationConfig
from spp.eval.ocr import OcrHyperparams
from spp.lang import EmbeddingHyperparams
from spp.model import PredictorConfig, TrainConfig
from spp.planner import PlannerHyperparams

ENV_OUTPUT_ROOT = "SPP_OUTPUT_ROOT"
ENV_WORKERS = "SPP_WORKERS"
SPLIT_MODES = ("random", "seen_unseen")


@dataclass(frozen=True)
class RunConfig:
    output_root: str = "runs/desk"
    seed: int = 0
    split: str = "random"
    word_list: Optional[str] = None
    workers: int = 1
    embedding_dims: int = 512
    datagen: DatagenConfig = field(default_factory=DatagenConfig)
    embedding: EmbeddingHyperparams = field(default_factory=EmbeddingHyperparams)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    planner: PlannerHyperparams = field(default_factory=PlannerHyperparams)
    ocr: OcrHyperparams = field(default_factory=OcrHyperparams)
    eval: AblationConfig = field(default_factory=AblationConfig)

    def check(self) -> None:
        if self.split not in SPLIT_MODES:
            raise ConfigError(f"split must be one of {SPLIT_MODES}, got {self.split!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.embedding_dims != self.predictor.d_emb:
            raise ConfigError(f"embedding_dims {self.embedding_dims} != predictor.d_emb {self.predictor.d_emb}")
        self.planner.check()

    def to_json(self) -> dict:
        return _to_json(self)

    @property
    def root(self) -> Path:
        return Path(self.output_root)


def _to_json(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_json(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_json(v) for v in obj]
    return obj


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return build(tp, value, where)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, where) for v in value)
        return tuple(_coerce(a, v, where) for a, v in zip(args, value))
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if tp in (int, float, str, bool) and not isinstance(value, tp):
        raise ConfigError(f"{where}: expected {tp.__name__}, got {value!r}")
    if tp is int and isinstance(value, bool):
        raise ConfigError(f"{where}: expected int, got {value!r}")
    return value


def build(cls, data: Optional[dict], where: str = "config"):
    """Instantiate a (nested) dataclass from plain data, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path: Optional[Path | str] = None, overrides: Optional[dict] = None,
                env: Optional[dict] = None) -> RunConfig:
    """Read YAML, apply environment then explicit overrides, validate."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    env = os.environ if env is None else env
    if env.get(ENV_OUTPUT_ROOT):
        data["output_root"] = env[ENV_OUTPUT_ROOT]
    if env.get(ENV_WORKERS):
        try:
            data["workers"] = int(env[ENV_WORKERS])
        except ValueError:
            raise ConfigError(f"{ENV_WORKERS} must be an integer") from None
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    cfg = build(RunConfig, data)
    cfg.check()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_json(), sort_keys=True)
