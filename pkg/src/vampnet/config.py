"""Run configuration: flat `key = value` sections, one per module.

A run config file collects every knob the CLI exposes.  All fields carry
defaults, unknown sections or keys are rejected by name, and command-line
flags override file values.  Example::

    [model]
    fusion = adaptive
    d_model = 64

    [train]
    max_epochs = 100
    augment = false
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import BaselineTrainConfig, CnnBaselineConfig, MlpConfig
from .errors import ConfigError, FileFormatError
from .model import ModelConfig
from .synth import SyntheticSpec
from .train import TrainConfig

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


@dataclass
class ExplainConfig:
    steps: int = 20
    min_occurrence: int = 10
    top_k: int = 5
    layer: int = 0
    edge_threshold: float | None = None  # None keeps the percentile default

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.min_occurrence < 1:
            raise ConfigError(f"min_occurrence must be >= 1, got {self.min_occurrence}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.layer < 0:
            raise ConfigError(f"layer must be >= 0, got {self.layer}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(vocab_size=2))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(seed=0))
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    baseline: BaselineTrainConfig = field(default_factory=lambda: BaselineTrainConfig(seed=0))
    mlp: MlpConfig = field(default_factory=MlpConfig)
    cnn: CnnBaselineConfig = field(default_factory=CnnBaselineConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)


def _coerce(raw: str, type_name: str, where: str):
    t = type_name.replace(" ", "")
    if t.endswith("|None"):
        if raw.lower() in ("none", ""):
            return None
        t = t[: -len("|None")]
    try:
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        if t == "str":
            return raw
        if t == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if t.startswith("tuple["):
            elem = int if "int" in t else float
            return tuple(elem(tok) for tok in raw.split())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type_name}") from None
    raise ConfigError(f"{where}: unsupported field type {type_name}")


def _apply(section_cfg, section: str, pairs: dict[str, str]):
    by_name = {f.name: f for f in dataclasses.fields(section_cfg)}
    updates = {}
    for key, raw in pairs.items():
        if key not in by_name:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        updates[key] = _coerce(raw, by_name[key].type, f"[{section}] {key}")
    return dataclasses.replace(section_cfg, **updates)


def parse_run_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    sections = {f.name for f in dataclasses.fields(RunConfig)}
    current: str | None = None
    pending: dict[str, dict[str, str]] = {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in sections:
                raise ConfigError(f"unknown section [{current}]")
            pending.setdefault(current, {})
            continue
        if " = " not in line:
            raise FileFormatError(f"expected 'key = value', got {line!r}", no)
        if current is None:
            raise FileFormatError(f"key outside any section: {line!r}", no)
        key, value = line.split(" = ", 1)
        pending[current][key.strip()] = value.strip()
    updates = {name: _apply(getattr(cfg, name), name, pairs) for name, pairs in pending.items()}
    return dataclasses.replace(cfg, **updates)


def load_run_config(path: str | Path | None, base: RunConfig | None = None) -> RunConfig:
    if path is None:
        return base if base is not None else RunConfig()
    return parse_run_config(Path(path).read_text(), base)


def override(cfg: RunConfig, dotted_key: str, raw: str) -> RunConfig:
    """Apply one `section.key = raw` flag override on top of a config."""
    if "." not in dotted_key:
        raise ConfigError(f"override key must look like section.key, got {dotted_key!r}")
    section, key = dotted_key.split(".", 1)
    if section not in {f.name for f in dataclasses.fields(RunConfig)}:
        raise ConfigError(f"unknown section {section!r} in override {dotted_key!r}")
    updated = _apply(getattr(cfg, section), section, {key: raw})
    return dataclasses.replace(cfg, **{section: updated})
