"""
Configuration helpers for the local-coding toolkit.

Values are read from environment variables so that benchmark campaigns and
CI runs can tune defaults without touching code. A local `.env` file is
loaded before the variables are read. Every library entry point also takes
explicit arguments; these settings only provide the defaults.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction

try:
    from dotenv import load_dotenv
    load_dotenv()  # Load .env file if it exists
except ImportError:
    pass  # python-dotenv is optional


LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class ConfigError(ValueError):
    """An environment variable holds a value that cannot be parsed."""


def _get(name: str, default: str | None = None) -> str:
    """Return an environment variable or raise if it is required."""
    try:
        value = os.environ[name]
    except KeyError as exc:
        if default is not None:
            return default
        raise RuntimeError(f"Missing required environment variable: {name}") from exc
    return value


def _fraction(name: str, default: str) -> Fraction:
    raw = _get(name, default)
    try:
        return Fraction(raw)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{name} must be a rational number, got {raw!r}") from exc


def _int(name: str, default: str) -> int:
    raw = _get(name, default)
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from exc
    if value < 0:
        raise ConfigError(f"{name} must be non-negative, got {value}")
    return value


def _flag(name: str, default: str) -> bool:
    raw = _get(name, default).strip().lower()
    if raw in {"1", "true", "yes", "on"}:
        return True
    if raw in {"0", "false", "no", "off", ""}:
        return False
    raise ConfigError(f"{name} must be a boolean flag, got {raw!r}")


def _level(name: str, default: str) -> str:
    raw = _get(name, default).strip().upper()
    if raw not in LOG_LEVELS:
        raise ConfigError(f"{name} must be one of {', '.join(LOG_LEVELS)}, got {raw!r}")
    return raw


@dataclass(frozen=True)
class Settings:
    lz_constant: Fraction
    calibration_samples: int
    default_eps: Fraction
    naive_c: Fraction
    blockvar_c0: Fraction
    blockvar_c1: Fraction
    bench_trials: int
    bench_probes: int
    workers: int
    track_distinct: bool
    log_level: str


def load() -> Settings:
    """Hydrate the toolkit defaults from environment variables."""
    return Settings(
        lz_constant=_fraction("LCU_LZ_CONSTANT", "1"),
        calibration_samples=_int("LCU_CALIBRATION_SAMPLES", "100000"),
        default_eps=_fraction("LCU_DEFAULT_EPS", "2/5"),
        naive_c=_fraction("LCU_NAIVE_C", "8"),
        blockvar_c0=_fraction("LCU_BLOCKVAR_C0", "8"),
        blockvar_c1=_fraction("LCU_BLOCKVAR_C1", "4"),
        bench_trials=_int("LCU_BENCH_TRIALS", "200"),
        bench_probes=_int("LCU_BENCH_PROBES", "1000"),
        workers=max(1, _int("LCU_WORKERS", "1")),
        track_distinct=_flag("LCU_TRACK_DISTINCT", "false"),
        log_level=_level("LCU_LOG_LEVEL", "WARNING"),
    )
