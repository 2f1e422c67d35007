"""Training configuration, named presets and dotted-key overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .loss import LossConfig
from .masking import STRATEGIES, RatioSchedule
from .model import EncoderSpec

OPTIMIZERS = ("adam", "sgd")
LR_SCHEDULES = ("cosine", "poly")


@dataclass
class OptimConfig:
    name: str = "adam"
    lr: float = 1e-3
    weight_decay: float = 1e-5
    momentum: float = 0.9
    schedule: str = "cosine"

    def __post_init__(self):
        if self.name not in OPTIMIZERS:
            raise ConfigError(f"optim.name must be one of {OPTIMIZERS}, got {self.name!r}")
        if self.schedule not in LR_SCHEDULES:
            raise ConfigError(f"optim.schedule must be one of {LR_SCHEDULES}, got {self.schedule!r}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("learning rate and weight decay must be non-negative")


@dataclass
class MaskConfig:
    strategy: str = "foreground"
    ratio: float = 0.25
    # non-empty list switches to a per-epoch ratio schedule and overrides ``ratio``
    schedule: list = field(default_factory=list)
    block_size: int = 4

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"mask.strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0 <= self.ratio <= 1:
            raise ConfigError(f"mask.ratio must lie in [0, 1], got {self.ratio}")
        if self.block_size < 1:
            raise ConfigError("mask.block_size must be positive")
        self.ratio_schedule()

    def ratio_schedule(self) -> RatioSchedule:
        try:
            return RatioSchedule.from_values(self.schedule or [self.ratio])
        except ValueError as exc:
            raise ConfigError(f"mask.schedule: {exc}") from None


@dataclass
class DecoderConfig:
    kind: str = "bad"

    def __post_init__(self):
        if self.kind not in ("bad", "single"):
            raise ConfigError(f"decoder.kind must be 'bad' or 'single', got {self.kind!r}")


@dataclass
class TrainConfig:
    phase: str = "pretrain"
    seed: int = 0
    epochs: int = 30
    # when set, training stops after this many optimizer steps and the
    # learning-rate schedule spans just enough epochs to cover them
    max_steps: int | None = None
    batch_size: int = 16
    sample_fraction: float = 1.0
    init: str = "scratch"
    n_classes: int = 4
    split_seed: int = 0
    optim: OptimConfig = field(default_factory=OptimConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ConfigError(f"phase must be 'pretrain' or 'finetune', got {self.phase!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")
        if not 0 < self.sample_fraction <= 1:
            raise ConfigError(f"sample_fraction must lie in (0, 1], got {self.sample_fraction}")

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"optim": OptimConfig, "mask": MaskConfig, "loss": LossConfig,
             "encoder": EncoderSpec, "decoder": DecoderConfig}


def from_dict(d: dict) -> TrainConfig:
    d = copy.deepcopy(d)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        if name in _SECTIONS:
            cls = _SECTIONS[name]
            if not isinstance(value, dict):
                raise ConfigError(f"section {name!r} must be an object")
            sub_known = {f.name for f in fields(cls)}
            bad = set(value) - sub_known
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            try:
                kwargs[name] = cls(**value)
            except TypeError as exc:
                raise ConfigError(str(exc)) from None
        else:
            kwargs[name] = value
    try:
        return TrainConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            return from_dict(json.load(fh))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def valid_keys() -> set[str]:
    keys = set()
    for f in fields(TrainConfig):
        if f.name in _SECTIONS:
            keys |= {f"{f.name}.{g.name}" for g in fields(_SECTIONS[f.name])}
        else:
            keys.add(f.name)
    return keys


def check_key(key: str) -> None:
    if key not in valid_keys():
        raise ConfigError(f"unknown config key {key!r}")


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def with_overrides(cfg: TrainConfig, overrides) -> TrainConfig:
    """Return a validated copy with ``{"a.b": value}`` (or ``["a.b=value", ...]``) applied."""
    if isinstance(overrides, (list, tuple)):
        pairs = {}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not KEY=VALUE")
            key, text = item.split("=", 1)
            pairs[key.strip()] = parse_value(text)
        overrides = pairs
    d = cfg.to_dict()
    for key, value in overrides.items():
        check_key(key)
        if "." in key:
            section, name = key.split(".", 1)
            d[section][name] = value
        else:
            d[key] = value
    return from_dict(d)


def preset(name: str, phase: str = "pretrain") -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return from_dict(PRESETS[name][phase])


def _both(pre: dict, fine: dict) -> dict:
    return {"pretrain": {"phase": "pretrain", **pre}, "finetune": {"phase": "finetune", **fine}}


PRESETS = {
    "desk": _both(
        {"epochs": 30, "batch_size": 16, "optim": {"name": "adam", "lr": 1e-3, "weight_decay": 1e-5}},
        {"epochs": 60, "batch_size": 16, "optim": {"name": "adam", "lr": 1e-3, "weight_decay": 1e-5}},
    ),
    "paper-brats2019": _both(
        {"epochs": 250, "batch_size": 64,
         "optim": {"name": "adam", "lr": 1e-4, "weight_decay": 1e-5, "schedule": "cosine"}},
        {"epochs": 500, "batch_size": 64,
         "optim": {"name": "adam", "lr": 1e-4, "weight_decay": 1e-5, "schedule": "cosine"}},
    ),
    "paper-isic2018": _both(
        {"epochs": 125, "batch_size": 12,
         "optim": {"name": "sgd", "lr": 1e-3, "weight_decay": 1e-8, "schedule": "poly"}},
        {"epochs": 300, "batch_size": 12,
         "optim": {"name": "sgd", "lr": 5e-4, "weight_decay": 1e-8, "schedule": "poly"}},
    ),
    "paper-acdc2017": _both(
        {"epochs": 300, "batch_size": 16,
         "optim": {"name": "sgd", "lr": 1e-2, "weight_decay": 1e-4, "schedule": "poly"}},
        {"epochs": 1200, "batch_size": 16,
         "optim": {"name": "sgd", "lr": 1e-2, "weight_decay": 1e-4, "schedule": "poly"}},
    ),
}
