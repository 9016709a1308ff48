"""Run configuration: nested dataclasses, dotted-key overrides, seeding.

A run is configured by four groups (model, mask, train, synth). Values come
from defaults, then an optional config file of `group.field = value` lines,
then command-line overrides, in that order. Serialization is canonical
(sorted keys) so a config can be hashed and persisted alongside artifacts.

Random streams are derived per component from one root seed and a stable
text label, so adding a consumer never shifts the draws of another.
"""

from __future__ import annotations

import dataclasses
import hashlib
import zlib
from dataclasses import dataclass

import numpy as np

from .data import SynthSpec
from .encoders import TransformerConfig
from .masking import MaskConfig

__all__ = [
    "TrainConfig",
    "RunConfig",
    "ConfigError",
    "seeded_rng",
    "seeded_int",
    "parse_overrides",
    "load_config_file",
    "serialize_config",
    "config_hash",
]


class ConfigError(ValueError):
    """Raised for unknown keys or uncoercible values."""


def seeded_rng(root_seed: int, label: str) -> np.random.Generator:
    """Independent generator for one named component of a run."""
    return np.random.default_rng(np.random.SeedSequence([root_seed, zlib.crc32(label.encode())]))


def seeded_int(root_seed: int, label: str) -> int:
    """Stable derived integer seed for components that take one directly."""
    return int(seeded_rng(root_seed, label).integers(0, 2**31 - 1))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0
    lambda1: float = 0.5
    lambda2: float = 0.5
    variant: str = "full"
    patience: int = 10

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("adversarial loss weights must be non-negative")
        if self.variant not in ("full", "wo_dd", "wo_sd", "wo_rd"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 0:
            raise ValueError("batch_size must be >= 1, epochs and patience >= 0")


@dataclass(frozen=True)
class RunConfig:
    model: TransformerConfig = TransformerConfig()
    mask: MaskConfig = MaskConfig()
    train: TrainConfig = TrainConfig()
    synth: SynthSpec = SynthSpec()


_GROUPS = ("model", "mask", "train", "synth")

# The adversarial loss weights are stored on the train group but are also
# addressable under the `adv.` prefix, which is their public key name.
_ALIASES = {
    "adv.lambda1": ("train", "lambda1"),
    "adv.lambda2": ("train", "lambda2"),
}


def _coerce(field: dataclasses.Field, raw: str):
    t = field.type
    if t in ("int", int):
        return int(raw)
    if t in ("float", float):
        return float(raw)
    if t in ("bool", bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(raw)
    return raw


def parse_overrides(pairs: list[str], base: RunConfig | None = None) -> RunConfig:
    """Apply `group.field=value` strings on top of a base config."""
    cfg = base or RunConfig()
    groups = {g: getattr(cfg, g) for g in _GROUPS}
    staged: dict[str, dict[str, object]] = {g: {} for g in _GROUPS}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = (s.strip() for s in pair.split("=", 1))
        if "." not in key:
            raise ConfigError(f"key {key!r} must be group.field")
        group, name = _ALIASES.get(key, tuple(key.split(".", 1)))
        if group not in _GROUPS:
            raise ConfigError(f"unknown group {group!r} (expected one of {_GROUPS} or adv)")
        fields = {f.name: f for f in dataclasses.fields(groups[group])}
        if name not in fields:
            raise ConfigError(f"unknown key {key!r}")
        try:
            staged[group][name] = _coerce(fields[name], raw)
        except ValueError:
            raise ConfigError(f"cannot parse value {raw!r} for {key}")
    out = {}
    for g in _GROUPS:
        out[g] = dataclasses.replace(groups[g], **staged[g]) if staged[g] else groups[g]
    return RunConfig(**out)


def load_config_file(path: str, base: RunConfig | None = None) -> RunConfig:
    """Read `group.field = value` lines; # starts a comment, blanks ignored."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{ln}: expected key = value, got {line.rstrip()!r}")
            pairs.append(text)
    return parse_overrides(pairs, base)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form: sorted dotted keys, one per line."""
    lines = []
    for g in _GROUPS:
        obj = getattr(cfg, g)
        for f in sorted(dataclasses.fields(obj), key=lambda f: f.name):
            lines.append(f"{g}.{f.name} = {getattr(obj, f.name)}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]
