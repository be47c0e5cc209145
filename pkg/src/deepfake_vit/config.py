"""Experiment configuration and its flat ``section.key = value`` text format.

Example::

    seed = 0
    data.count = 1000
    model.layers = 4
    backbone.stage_channels = 16, 32, 64, 64
    student.epochs = 12

Blank lines and ``#`` comments are ignored. Every key is optional; missing
keys keep their defaults. Run seeds are not configurable individually: they
all derive from the master ``seed``.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field

from .backbone import BackboneConfig
from .data import DatasetConfig
from .errors import ConfigError
from .model import ModelConfig, PatchConfig
from .rng import derive_seed
from .train import LossConfig, TrainRunConfig


def _teacher_defaults() -> TrainRunConfig:
    return TrainRunConfig(epochs=20, batch_size=12, lr=0.01)


def _student_defaults() -> TrainRunConfig:
    return TrainRunConfig(epochs=12, batch_size=12, lr=0.01)


@dataclass
class ExperimentConfig:
    data: DatasetConfig = field(default_factory=lambda: DatasetConfig(count=1000, test_count=400))
    patch: PatchConfig | None = None          # None: take the model's
    backbone: BackboneConfig | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    teacher: TrainRunConfig = field(default_factory=_teacher_defaults)
    student: TrainRunConfig = field(default_factory=_student_defaults)
    seed: int = 0
    out: str = "runs/default"

    def __post_init__(self):
        # patch/backbone are shared with the model, so either spelling edits both
        self.patch = self.patch or self.model.patch
        self.backbone = self.backbone or self.model.backbone
        self.model.patch = self.patch
        self.model.backbone = self.backbone

    def validate(self) -> None:
        """Cross-section checks; run before anything is allocated."""
        self.data.validate()
        self.model.validate()
        self.loss.validate()
        self.teacher.validate()
        self.student.validate()
        d, p = self.data, self.patch
        if (d.height, d.width, d.channels) != (p.height, p.width, p.channels):
            raise ConfigError(f"data images {d.channels}x{d.height}x{d.width} do not match the "
                              f"model input {p.channels}x{p.height}x{p.width}")

    def resolved(self) -> "ExperimentConfig":
        """Copy with every run seed derived from the master seed."""
        cfg = from_text(to_text(self))
        cfg.data.seed = derive_seed(self.seed, "data")
        cfg.teacher.seed = derive_seed(self.seed, "teacher")
        cfg.student.seed = derive_seed(self.seed, "student")
        return cfg


_SECTIONS = ("data", "patch", "backbone", "model", "loss", "teacher", "student")
_HIDDEN = {("data", "seed"), ("teacher", "seed"), ("student", "seed"),
           ("model", "patch"), ("model", "backbone")}


def _section_fields(obj):
    hints = typing.get_type_hints(type(obj))
    for f in dataclasses.fields(obj):
        tp = hints[f.name]
        if typing.get_origin(tp) in (typing.Union, types.UnionType):
            tp = next(a for a in typing.get_args(tp) if a is not type(None))
        yield f.name, tp


def _format(value) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    try:
        if origin in (list, tuple):
            (inner, *_) = typing.get_args(tp)
            items = [_parse(part.strip(), inner, key) for part in raw.split(",") if part.strip()]
            return items if origin is list else tuple(items)
        if tp is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{key}: unsupported field type {tp}")


def to_text(cfg: ExperimentConfig, include_out: bool = True) -> str:
    """Serialize every key; checkpoints leave out the (location-only) ``out``."""
    lines = [f"seed = {cfg.seed}"] + ([f"out = {cfg.out}"] if include_out else [])
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for name, _ in _section_fields(obj):
            if (section, name) not in _HIDDEN:
                lines.append(f"{section}.{name} = {_format(getattr(obj, name))}")
    return "\n".join(lines) + "\n"


def from_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        set_value(cfg, key, raw)
    return cfg


def set_value(cfg: ExperimentConfig, key: str, raw: str) -> None:
    if key == "seed":
        cfg.seed = _parse(raw, int, key)
        return
    if key == "out":
        cfg.out = raw
        return
    section, _, name = key.partition(".")
    if section not in _SECTIONS or (section, name) in _HIDDEN:
        raise ConfigError(f"unknown config key {key!r}")
    obj = getattr(cfg, section)
    types = dict(_section_fields(obj))
    if name not in types:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(obj, name, _parse(raw, types[name], key))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return from_text(fh.read())
