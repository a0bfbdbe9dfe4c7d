"""INI-style configuration shared by every CLI command.

Sections: ``[model]``, ``[analyzer]``, ``[pipeline]``, ``[training]``, ``[synth]``.
Keys mirror the dataclass fields below; anything else is rejected. Values
given on the command line win over the file, and ``DUO_SEED`` in the
environment overrides the file's seeds.
"""
from __future__ import annotations

import collections.abc
import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from .analyzer import AnalyzerConfig
from .data import SynthConfig
from .errors import ConfigError
from .model import ModelConfig, detector_config, recognizer_config
from .pipeline import PipelineConfig
from .training import TrainingConfig

SEED_ENV = "DUO_SEED"
DEFAULT_INPUT_DIM = 78
DEFAULT_NUM_CLASSES = 17


@dataclass(frozen=True)
class ModelSettings:
    detector_hidden: int = 256
    recognizer_hidden: Tuple[int, ...] = (256, 256, 256)
    dropout: float = 0.2
    input_dim: Optional[int] = None  # None: taken from the data
    num_classes: Optional[int] = None

    def detector(self, input_dim: Optional[int] = None, seed: int = 0) -> ModelConfig:
        return detector_config(input_dim or self.input_dim or DEFAULT_INPUT_DIM, self.detector_hidden, seed)

    def recognizer(self, input_dim: Optional[int] = None, num_classes: Optional[int] = None, seed: int = 0) -> ModelConfig:
        return recognizer_config(
            input_dim or self.input_dim or DEFAULT_INPUT_DIM,
            tuple(self.recognizer_hidden),
            num_classes or self.num_classes or DEFAULT_NUM_CLASSES,
            self.dropout,
            seed,
        )


@dataclass(frozen=True)
class AppConfig:
    model: ModelSettings = field(default_factory=ModelSettings)
    analyzer: AnalyzerConfig = field(default_factory=AnalyzerConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def pipeline_config(self) -> PipelineConfig:
        """Pipeline settings with the ``[analyzer]`` section folded in."""
        return dataclasses.replace(self.pipeline, analyzer=self.analyzer)


_SECTIONS = {
    "model": ModelSettings,
    "analyzer": AnalyzerConfig,
    "pipeline": PipelineConfig,
    "training": TrainingConfig,
    "synth": SynthConfig,
}
# nested or derived fields that are not settable from a file
_HIDDEN = {("pipeline", "analyzer")}


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in text.replace(",", " ").split())


def _convert(hint, text: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        if text.strip().lower() in ("", "none"):
            return None
        return _convert(next(a for a in args if a is not type(None)), text)
    if hint is bool:
        return _parse_bool(text)
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text.strip()
    if origin in (tuple, collections.abc.Sequence):
        return _ints(text)
    raise TypeError(f"unsupported config type {hint!r}")


def _section(name: str, items: dict, base):
    cls = _SECTIONS[name]
    hints = typing.get_type_hints(cls)
    fields = {f.name for f in dataclasses.fields(cls)} - {f for s, f in _HIDDEN if s == name}
    values = {}
    for key, raw in items.items():
        if key not in fields:
            raise ConfigError(f"[{name}] unknown key {key!r}; allowed: {', '.join(sorted(fields))}")
        try:
            values[key] = _convert(hints[key], raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {key} = {raw!r}: {exc}") from None
    try:
        return dataclasses.replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def parse_config(text: str, source: str = "<config>") -> AppConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive field names
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {sorted(unknown)}; allowed: {sorted(_SECTIONS)}")
    cfg = AppConfig()
    parts = {}
    for name in _SECTIONS:
        base = getattr(cfg, name)
        parts[name] = _section(name, dict(parser[name]), base) if parser.has_section(name) else base
    return AppConfig(**parts)


def load_config(path: Optional[os.PathLike] = None, environ=None) -> AppConfig:
    """Read ``path`` (or the defaults) and apply the ``DUO_SEED`` override."""
    if path is None:
        cfg = AppConfig()
    else:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        cfg = parse_config(text, str(p))
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        cfg = with_seed(cfg, seed)
    return cfg


def with_seed(cfg: AppConfig, seed: int) -> AppConfig:
    return dataclasses.replace(
        cfg,
        training=dataclasses.replace(cfg.training, seed=seed),
        synth=dataclasses.replace(cfg.synth, seed=seed),
    )


def override(cfg: AppConfig, section: str, **values) -> AppConfig:
    """Apply command-line values to one section, skipping those left as ``None``."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    try:
        updated = dataclasses.replace(getattr(cfg, section), **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return dataclasses.replace(cfg, **{section: updated})
