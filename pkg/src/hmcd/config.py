"""Run configuration: flat key=value files, flag overrides, seed fallback.

Precedence, highest first: command line flags, config file entries, the
HMCD_SEED environment variable (seed only), built-in defaults. Unknown keys
and out-of-range values fail loudly; a typo in a config file must never
silently run with defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError, OutOfBounds, UnknownKey

SEED_ENV_VAR = "HMCD_SEED"


@dataclass
class CliConfig:
    seed: int = 0
    idle_gap_s: float = 60.0
    lenient: bool = False
    # classifier training
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    folds: int = 5
    # experiments
    repeats: int = 5
    gaf_count: int = 0
    preset: str = ""
    # dictionary / generation
    threshold: int = 5
    seq_len: int = 32
    noise_dim: int = 64
    gp_lambda: float = 10.0
    critic_steps: int = 5
    gan_iterations: int = 200
    gan_batch_size: int = 32
    gan_learning_rate: float = 1e-4
    conv_layers: int = 3
    dense_layers: int = 2
    max_retries: int = 10
    fields: str = "@start-line,user-agent"
    # execution
    jobs: int = 1

    def field_list(self) -> tuple[str, ...]:
        return tuple(f.strip() for f in self.fields.split(",") if f.strip())

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(CliConfig)}


# key -> (type, low bound, low open?, high bound)
_BOUNDS: dict[str, tuple[type, float | None, bool, float | None]] = {
    "seed": (int, 0, False, None),
    "idle_gap_s": (float, 0, True, None),
    "lenient": (bool, None, False, None),
    "epochs": (int, 1, False, None),
    "batch_size": (int, 1, False, None),
    "learning_rate": (float, 0, True, None),
    "folds": (int, 2, False, None),
    "repeats": (int, 1, False, None),
    "gaf_count": (int, 0, False, None),
    "preset": (str, None, False, None),
    "threshold": (int, 0, False, None),
    "seq_len": (int, 1, False, None),
    "noise_dim": (int, 1, False, None),
    "gp_lambda": (float, 0, False, None),
    "critic_steps": (int, 1, False, None),
    "gan_iterations": (int, 1, False, None),
    "gan_batch_size": (int, 1, False, None),
    "gan_learning_rate": (float, 0, True, None),
    "conv_layers": (int, 1, False, None),
    "dense_layers": (int, 1, False, None),
    "max_retries": (int, 1, False, None),
    "fields": (str, None, False, None),
    "jobs": (int, 1, False, None),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_value(key: str, raw: str) -> Any:
    kind = _BOUNDS[key][0]
    if kind is bool:
        low = raw.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: {raw!r} is not a boolean")
    if kind is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {raw!r} is not an integer") from exc
    if kind is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {raw!r} is not a number") from exc
    return raw


def check_bounds(key: str, value: Any) -> Any:
    if key not in _BOUNDS:
        raise UnknownKey(f"unknown configuration key {key!r}")
    kind, lo, lo_open, hi = _BOUNDS[key]
    if kind in (int, float) and value is not None:
        if lo is not None and (value <= lo if lo_open else value < lo):
            op = ">" if lo_open else ">="
            raise OutOfBounds(f"{key} must be {op} {lo}, got {value}")
        if hi is not None and value > hi:
            raise OutOfBounds(f"{key} must be <= {hi}, got {value}")
    return value


def load_config(path: str | Path) -> dict[str, Any]:
    """Parse a key=value file; '#' starts a comment, blank lines skipped."""
    values: dict[str, Any] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _BOUNDS:
            raise UnknownKey(f"{path}:{lineno}: unknown configuration key {key!r}")
        values[key] = check_bounds(key, _parse_value(key, raw.strip()))
    return values


def resolve_config(
    file_values: Mapping[str, Any] | None = None,
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> CliConfig:
    """Merge defaults, file, environment seed, and flag overrides."""
    env = os.environ if env is None else env
    cfg = CliConfig()
    if SEED_ENV_VAR in env:
        raw = env[SEED_ENV_VAR]
        try:
            cfg.seed = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR}={raw!r} is not an integer") from exc
        check_bounds("seed", cfg.seed)
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            setattr(cfg, key, check_bounds(key, value))
    return cfg
