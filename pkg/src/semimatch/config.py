"""Flat key=value config files covering matcher and training settings."""
from __future__ import annotations

from dataclasses import dataclass, field

from .pipeline import MatcherConfig
from .train import TrainConfig

_MATCHER_KEYS = set(MatcherConfig().__dataclass_fields__)
_TRAIN_KEYS = {"steps", "batch_size", "lr", "weight_decay", "warmup_steps", "clip_norm", "seed", "max_fine_matches"}
_LOSS_KEYS = {"alpha", "beta"}


@dataclass
class Settings:
    matcher: MatcherConfig = field(default_factory=MatcherConfig.toy)
    train: TrainConfig = field(default_factory=TrainConfig)


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_settings(path: str | None) -> Settings:
    settings = Settings()
    if path is None:
        return settings
    with open(path, "r", encoding="utf-8") as fh:
        overrides = parse_config_text(fh.read())
    apply_overrides(settings, overrides)
    return settings


def apply_overrides(settings: Settings, overrides: dict[str, str]) -> Settings:
    matcher_dict = {}
    for key, value in overrides.items():
        if key in _MATCHER_KEYS:
            matcher_dict[key] = value
        elif key in _TRAIN_KEYS:
            current = getattr(settings.train, key)
            setattr(settings.train, key, type(current)(_coerce(value)))
        elif key in _LOSS_KEYS:
            setattr(settings.train.weights, key, float(value))
        else:
            raise KeyError(f"unknown config key {key!r}")
    if matcher_dict:
        base = settings.matcher.to_dict()
        base.update(matcher_dict)
        settings.matcher = MatcherConfig.from_dict(base)
    return settings


def _coerce(value: str):
    try:
        return int(value)
    except ValueError:
        return float(value)
