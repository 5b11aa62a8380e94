"""Run configuration: plain-text key=value files plus overrides.

One flat namespace covers the network structure, the training schedule
and the augmentation ranges.  Unknown keys are rejected, both in files
and in ``--set`` overrides, so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

from .network import (NetworkConfig, entry_channels_from_text,
                      entry_channels_to_text)

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_assignments",
           "apply_assignments", "default_run_config"]


class ConfigError(ValueError):
    """Malformed config file, unknown key, or bad value."""


@dataclass
class RunConfig:
    # network structure
    pyramids: int = 4
    levels: int = 2
    joints: int = 17
    features: int = 64
    input_h: int = 128
    input_w: int = 128
    entry_channels: str = "8,8:16,16:32,32:64"
    precision: str = "f32"
    # training schedule
    steps: int = 2000
    batch_size: int = 8
    lr: float = 0.001
    seed: int = 0
    train_size: int = 384
    val_size: int = 48
    val_interval: int = 100
    depth2d_fraction: float = 0.25
    # augmentation
    augment: bool = True
    rotation_max_deg: float = 30.0
    scale_min: float = 0.7
    scale_max: float = 1.3
    brightness_min: float = 0.9
    brightness_max: float = 1.1
    # evaluation / bench defaults
    eval_size: int = 64
    bench_warmup: int = 10
    bench_reps: int = 50

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            pyramids=self.pyramids,
            levels=self.levels,
            joints=self.joints,
            features=self.features,
            input_size=(self.input_h, self.input_w),
            entry_channels=entry_channels_from_text(self.entry_channels),
            precision=self.precision,
        )

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


def default_run_config() -> RunConfig:
    return RunConfig()


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    f = _FIELDS[key]
    raw = raw.strip()
    try:
        if f.type in ("int", int):
            return int(raw)
        if f.type in ("float", float):
            return float(raw)
        if f.type in ("bool", bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def apply_assignments(config: RunConfig,
                      assignments: dict[str, str]) -> RunConfig:
    values = {}
    for key, raw in assignments.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key: {key}")
        values[key] = _coerce(key, raw)
    out = dataclasses.replace(config, **values)
    try:
        out.network()  # validate the structural part eagerly
        entry_channels_to_text(entry_channels_from_text(out.entry_channels))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return out


def parse_assignments(pairs: list[str]) -> dict[str, str]:
    """Parse ``key=value`` strings (the --set override syntax)."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value
    return out


def load_config(path: str | os.PathLike,
                base: RunConfig | None = None) -> RunConfig:
    """Read a key=value file (blank lines and # comments allowed)."""
    assignments = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(
                    f"{path}:{lineno}: expected key=value, got "
                    f"{stripped!r}")
            key, value = stripped.split("=", 1)
            assignments[key.strip()] = value.strip()
    return apply_assignments(base or RunConfig(), assignments)
