"""Pipeline configuration: a TOML file, overridable from the command line."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cnn import TrainConfig
from .features import DEFAULT_ORG_DOMAIN, OfficeHours


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    logs: str = ""
    ground_truth: str = ""
    strict: bool = True
    expect: str = ""  # "cert-r4.2" checks the published corpus volumes at ingest


@dataclass
class SynthSection:
    users: int = 200
    days: int = 120
    fraction: float = 0.015
    seed: int = 42


@dataclass
class FeatureSection:
    office_hours: str = "08:00-17:00"
    org_domain: str = DEFAULT_ORG_DOMAIN


@dataclass
class SplitSection:
    fraction_train: float = 0.75
    ratio: float = 150.0


@dataclass
class SeedSection:
    split: int = 1
    sample: int = 2
    init: int = 3
    shuffle: int = 4


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 20
    freeze_mode: str = "full"
    fine_tune_layers: int = 1
    checkpoint: str = ""  # optional starting weights


@dataclass
class OutputSection:
    dir: str = "run"


@dataclass
class PipelineConfig:
    data: DataSection = field(default_factory=DataSection)
    synth: SynthSection = field(default_factory=SynthSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    split: SplitSection = field(default_factory=SplitSection)
    seeds: SeedSection = field(default_factory=SeedSection)
    train: TrainSection = field(default_factory=TrainSection)
    output: OutputSection = field(default_factory=OutputSection)

    # -- derived -----------------------------------------------------------
    @property
    def office_hours(self) -> OfficeHours:
        return OfficeHours.parse(self.features.office_hours)

    @property
    def out_dir(self) -> Path:
        return Path(self.output.dir)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            learning_rate=t.learning_rate, beta1=t.beta1, beta2=t.beta2, epsilon=t.epsilon,
            batch_size=t.batch_size, epochs=t.epochs, seed=self.seeds.shuffle,
            freeze_mode=t.freeze_mode, fine_tune_layers=t.fine_tune_layers,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of the experiment settings; the output location is not part of it."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate(self) -> None:
        try:
            self.office_hours
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0 < self.split.fraction_train < 1:
            raise ConfigError("split.fraction_train must lie in (0, 1)")
        if self.split.ratio <= 0:
            raise ConfigError("split.ratio must be positive")
        if self.data.expect not in ("", "cert-r4.2"):
            raise ConfigError(f"data.expect must be empty or 'cert-r4.2', got {self.data.expect!r}")


def _coerce(section_cls, name: str, values: dict[str, Any]):
    known = {f.name: f for f in fields(section_cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    kwargs = {}
    defaults = section_cls()
    for key, value in values.items():
        expected = type(getattr(defaults, key))
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            raise ConfigError(f"[{name}] {key} must be {expected.__name__}, got {value!r}")
        kwargs[key] = value
    return section_cls(**kwargs)


def from_dict(raw: dict[str, Any]) -> PipelineConfig:
    sections = {f.name: f.default_factory for f in fields(PipelineConfig)}
    unknown = sorted(set(raw) - set(sections))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    built = {}
    for name, factory in sections.items():
        value = raw.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}] must be a table")
        built[name] = _coerce(type(factory()), name, value)
    config = PipelineConfig(**built)
    config.validate()
    return config


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    config = from_dict(raw)
    base = path.parent
    for section, key in (("data", "logs"), ("data", "ground_truth"), ("train", "checkpoint"), ("output", "dir")):
        value = getattr(getattr(config, section), key)
        if value and not Path(value).is_absolute():
            setattr(getattr(config, section), key, str((base / value).resolve()))
    return config


def with_overrides(config: PipelineConfig, *, seed: int | None = None, ratio: float | None = None,
                   office_hours: str | None = None, out: str | None = None) -> PipelineConfig:
    config = copy.deepcopy(config)
    if seed is not None:
        config.seeds = SeedSection(split=seed, sample=seed + 1, init=seed + 2, shuffle=seed + 3)
    if ratio is not None:
        config.split.ratio = float(ratio)
    if office_hours is not None:
        config.features.office_hours = office_hours
    if out is not None:
        config.output.dir = out
    config.validate()
    return config
