"""YAML run configuration mapped onto the package dataclasses.

Unknown keys are rejected at every nesting level so typos fail loudly
instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .distill_decision import SoftDistParams
from .objective import HyperParams
from .toybench.data import SynthConfig
from .toybench.model import ModelConfig
from .toybench.train import TrainConfig

__all__ = ["RunConfig", "default_config", "load_config", "parse_config", "dump_config", "to_plain",
           "from_plain", "config_hash"]


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs.  ``seeds`` drive data, init and batching together."""

    # the desk-scale recipe: a deep wide teacher and a shallow student on three-view data
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(
        samples_per_id=14, part_input_dim=24, view_count=3, probe_per_id=4))
    student: ModelConfig = field(default_factory=lambda: ModelConfig(num_parts=8, hidden=32, depth=1, emb_dim=16))
    teachers: tuple = (ModelConfig(num_parts=8, hidden=64, depth=2, emb_dim=16),)
    teacher_train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=600))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=600))
    objective: HyperParams = field(default_factory=lambda: HyperParams(
        soft=SoftDistParams(T=4.0), lambda_logit=0.5, lambda_bound=5.0))
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.teachers:
            raise ConfigError("at least one teacher configuration is required")
        for t in self.teachers:
            if not isinstance(t, ModelConfig):
                raise ConfigError("teachers must be model configurations")


_NESTED = {
    (RunConfig, "teachers"): ModelConfig,
}


def from_plain(cls, data, path="config"):
    """Build dataclass ``cls`` from nested dicts, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}; allowed {sorted(known)}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, value in data.items():
        where = f"{path}.{name}"
        hint = hints[name]
        item_cls = _NESTED.get((cls, name))
        if item_cls is not None:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{where}: expected a list")
            kwargs[name] = tuple(from_plain(item_cls, v, f"{where}[{i}]") for i, v in enumerate(value))
        elif dataclasses.is_dataclass(hint):
            kwargs[name] = from_plain(hint, value, where)
        else:
            kwargs[name] = _coerce(value, hint, where)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _coerce(value, hint, where):
    if hint is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def to_plain(obj):
    """Dataclass tree -> dicts/lists of YAML scalars."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


def default_config() -> RunConfig:
    return RunConfig()


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return from_plain(RunConfig, data)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_plain(cfg), sort_keys=False, default_flow_style=False)


def config_hash(cfg: RunConfig) -> str:
    """Stable digest of the configuration (infinite values encoded as strings)."""

    def enc(v):
        if isinstance(v, float) and math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if isinstance(v, dict):
            return {k: enc(x) for k, x in v.items()}
        if isinstance(v, list):
            return [enc(x) for x in v]
        return v

    blob = json.dumps(enc(to_plain(cfg)), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
