"""Run configuration: flat key=value files, validation, and fingerprinting.

Every artifact a run emits is stamped with the fingerprint of its normalized
configuration so downstream stages can refuse mismatched inputs and the
pipeline can skip stages whose outputs are already current.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .errors import ConfigError
from .trainer import TrainConfig


@dataclass
class RunConfig(TrainConfig):
    """TrainConfig plus translation, retrieval, and benchmark settings."""

    hot_threshold: int = 20_000
    knn_method: str = "exact"
    neg_per_user: int = 50
    bench_m: tuple[int, ...] = (128, 256, 512)
    bench_passes: int = 40

    def validate(self) -> None:
        super().validate()
        if self.hot_threshold < 1:
            raise ConfigError("hot_threshold must be >= 1")
        if self.knn_method not in ("exact", "approximate"):
            raise ConfigError(f"unknown knn_method {self.knn_method!r}")
        if self.neg_per_user < 1:
            raise ConfigError("neg_per_user must be >= 1")
        if self.bench_passes < 5:
            raise ConfigError("bench_passes must be >= 5")


def _coerce(name: str, annotation, raw: str):
    raw = raw.strip()
    try:
        if annotation in ("int", int):
            return int(raw)
        if annotation in ("float", float):
            return float(raw)
        if str(annotation).startswith("tuple"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for config key {name!r}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines (blank lines and #-comments allowed).

    Unknown keys are errors; values override ``base`` (or the defaults).
    """
    cfg = base if base is not None else RunConfig()
    known = {f.name: f.type for f in fields(RunConfig)}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {ln}: expected `key = value`, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"config line {ln}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, known[key], raw))
    cfg.validate()
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def normalized_text(cfg: RunConfig) -> str:
    """Canonical rendering: sorted keys, stable value formatting."""
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(x) for x in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(normalized_text(cfg))


def fingerprint(cfg: RunConfig) -> str:
    """Stable short hash of the normalized configuration text."""
    return hashlib.sha256(normalized_text(cfg).encode("utf-8")).hexdigest()[:12]
