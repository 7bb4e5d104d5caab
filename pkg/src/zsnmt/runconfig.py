"""Layered key-value configuration and run manifests.

Config files hold ``key = value`` lines; lines starting with ``#`` are
comments. Layers are applied in order: built-in defaults, then each file,
then command-line overrides. Values are parsed as JSON when possible and
kept as strings otherwise.
"""

from __future__ import annotations

import json
import os
import platform
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError

SEED_ENV = "ZSNMT_SEED"


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def format_value(value: Any) -> str:
    """Inverse of :func:`parse_value`; strings are quoted only when they would parse as something else."""
    if isinstance(value, str) and value == value.strip() and parse_value(value) == value:
        return value
    return json.dumps(value, sort_keys=True)


def read_config(path) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip().replace("-", "_")] = parse_value(value)
    return out


def write_config(path, values: Mapping[str, Any]):
    lines = [f"{k} = {format_value(v)}" for k, v in sorted(values.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def layered(defaults: Mapping[str, Any], files=(), overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Merge defaults, config files and overrides; ``None`` overrides are ignored."""
    merged = dict(defaults)
    for f in files:
        for k, v in read_config(f).items():
            if k not in defaults:
                raise ConfigError(f"unknown config key '{k}' in {f}")
            merged[k] = v
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = v
    return merged


def default_seed(fallback: int = 0) -> int:
    value = os.environ.get(SEED_ENV)
    if value is None or value == "":
        return fallback
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from None


def versions() -> dict[str, str]:
    from . import __version__
    return {"zsnmt": __version__, "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(path, subcommand: str, config: Mapping[str, Any], seed: int | None,
                   config_path=None, extra: Mapping[str, Any] | None = None, argv: Sequence[str] = ()) -> Path:
    """Record what produced a run's outputs; rerunning with the echoed config reproduces them."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = {
        "subcommand": subcommand,
        "config_path": str(config_path) if config_path else "",
        "seed": seed,
        "argv": list(argv),
        **{f"config.{k}": v for k, v in config.items()},
        **{f"version.{k}": v for k, v in versions().items()},
        **{f"result.{k}": v for k, v in (extra or {}).items()},
    }
    write_config(path, values)
    return path
