"""Flat ``key=value`` configuration with dotted section prefixes.

    # comment
    train.lr0 = 1e-3
    model.preset = compact
    model.stages = ((1, 16, 7, 2), (1, 32, 7, 2))
    synth.planted_gap_days.gdm = 25

Values are Python literals (numbers, tuples, dicts, booleans); anything that
does not parse as a literal is kept as a string. A later assignment to the
same key wins, and command-line overrides are applied last.
"""
from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .loss import LossWeights
from .model import Net1DConfig
from .synth import SynthSpec
from .train import TrainConfig


class ConfigFileError(ValueError):
    pass


@dataclass
class DataConfig:
    split_seed: int = 0
    ratios: tuple = (8, 1, 1)
    augment_seed: int = 0


@dataclass
class PriorConfig:
    shrink: float = 0.8
    step: float = 1.0
    epsilon: float = 1e-6


@dataclass
class StatsConfig:
    bin_width: float = 7.0
    smoothing_window: int = 3
    min_support: int = 20


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: Net1DConfig = field(default_factory=Net1DConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    stats: StatsConfig = field(default_factory=StatsConfig)
    model_preset: str = "default"

    def validate(self) -> "RunConfig":
        self.synth.validate()
        self.augment.validate(self.model.input_len)
        self.model.validate()
        self.loss.validate()
        self.train.validate()
        if self.augment.window_len != self.model.input_len:
            raise ConfigFileError(f"augment.window_len {self.augment.window_len} != model.input_len "
                                  f"{self.model.input_len}")
        return self


SECTIONS = ("data", "synth", "augment", "model", "prior", "loss", "train", "stats")


def parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        low = text.lower()
        if low in ("true", "false"):
            return low == "true"
        return text


def parse_lines(lines) -> list:
    items = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigFileError(f"line {lineno}: empty key")
        items.append((key, parse_value(value)))
    return items


def read_pairs(path) -> list:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from exc
    return parse_lines(text.splitlines())


def _coerce(current, value, key):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigFileError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigFileError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigFileError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, tuple):
        if not isinstance(value, (tuple, list)):
            raise ConfigFileError(f"{key}: expected a tuple, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if isinstance(current, dict):
        if not isinstance(value, dict):
            raise ConfigFileError(f"{key}: expected a mapping, got {value!r}")
        return dict(value)
    return value


def set_field(obj, path: list, value, key: str):
    name = path[0]
    if not dataclasses.is_dataclass(obj) or name not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigFileError(f"unknown key {key!r}")
    current = getattr(obj, name)
    if len(path) == 1:
        setattr(obj, name, _coerce(current, value, key))
    elif isinstance(current, dict) and len(path) == 2:
        current = dict(current)
        current[path[1]] = value
        setattr(obj, name, current)
    else:
        raise ConfigFileError(f"unknown key {key!r}")


def apply_pairs(cfg: RunConfig, pairs) -> RunConfig:
    pairs = list(pairs)
    # a preset replaces the whole model section, so it goes first
    for key, value in pairs:
        if key == "model.preset":
            cfg.model_preset = str(value)
            if value == "compact":
                cfg.model = Net1DConfig.compact()
            elif value == "default":
                cfg.model = Net1DConfig()
            else:
                raise ConfigFileError(f"unknown model preset {value!r}")
    for key, value in pairs:
        if key == "model.preset":
            continue
        parts = key.split(".")
        if parts[0] not in SECTIONS or len(parts) < 2:
            raise ConfigFileError(f"unknown key {key!r}; keys look like <section>.<field>")
        set_field(getattr(cfg, parts[0]), parts[1:], value, key)
    return cfg


def load_run_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    pairs = read_pairs(path) if path else []
    pairs += parse_lines(overrides)
    return apply_pairs(cfg, pairs)


def load_synth_spec(path, overrides=()) -> SynthSpec:
    """Bare keys and ``synth.``-prefixed keys are both accepted."""
    spec = SynthSpec()
    pairs = (read_pairs(path) if path else []) + parse_lines(overrides)
    for key, value in pairs:
        parts = key.split(".")
        if parts[0] == "synth":
            parts = parts[1:]
        set_field(spec, parts, value, key)
    return spec


def _dump_obj(prefix: str, obj) -> list:
    lines = []
    for f in dataclasses.fields(obj):
        lines.append(f"{prefix}.{f.name}={getattr(obj, f.name)!r}")
    return lines


def dump_run_config(cfg: RunConfig) -> str:
    lines = [f"model.preset={cfg.model_preset}"]
    for section in SECTIONS:
        lines += _dump_obj(section, getattr(cfg, section))
    return "\n".join(lines) + "\n"


def dump_synth_spec(spec: SynthSpec) -> str:
    return "\n".join(_dump_obj("synth", spec)) + "\n"
