"""JSON configuration for the command-line tools.

Every subcommand has a flat schema of named keys with defaults; unknown
keys and ill-typed values raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import Any, Callable, Optional

__all__ = [
    "ConfigError",
    "SCHEMAS",
    "parse_config",
    "write_config",
]


class ConfigError(ValueError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


# validators receive (key, value) and return the normalized value

def _int(lo: Optional[int] = None, hi: Optional[int] = None) -> Callable:
    def check(key, v):
        if isinstance(v, bool) or not isinstance(v, int):
            if isinstance(v, float) and v.is_integer():
                v = int(v)
            else:
                raise ConfigError(key, f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            raise ConfigError(key, f"must be >= {lo}")
        if hi is not None and v > hi:
            raise ConfigError(key, f"must be <= {hi}")
        return v
    return check


def _float(positive: bool = False, nonneg: bool = False, optional: bool = False) -> Callable:
    def check(key, v):
        if v is None and optional:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(key, f"expected a number, got {v!r}")
        v = float(v)
        if math.isnan(v):
            raise ConfigError(key, "must not be NaN")
        if positive and not v > 0:
            raise ConfigError(key, "must be positive")
        if nonneg and v < 0:
            raise ConfigError(key, "must be nonnegative")
        return v
    return check


def _choice(*options) -> Callable:
    def check(key, v):
        if v not in options:
            raise ConfigError(key, f"must be one of {list(options)}, got {v!r}")
        return v
    return check


def _influence(key, v):
    if not isinstance(v, str):
        raise ConfigError(key, f"expected a shape name, got {v!r}")
    if v in {f"phi{i}" for i in range(1, 7)} or (v.startswith("table:") and len(v) > 6):
        return v
    raise ConfigError(key, f"unknown influence {v!r}; use phi1..phi6 or table:<path>")


def _bool(key, v):
    if not isinstance(v, bool):
        raise ConfigError(key, f"expected true or false, got {v!r}")
    return v


def _path(optional: bool = True) -> Callable:
    def check(key, v):
        if v is None and optional:
            return None
        if not isinstance(v, str) or not v:
            raise ConfigError(key, f"expected a file path, got {v!r}")
        return v
    return check


def _float_list(positive: bool = False, optional: bool = False) -> Callable:
    def check(key, v):
        if v is None and optional:
            return None
        if not isinstance(v, (list, tuple)):
            raise ConfigError(key, f"expected a list of numbers, got {v!r}")
        inner = _float(positive=positive)
        return [inner(f"{key}[{i}]", x) for i, x in enumerate(v)]
    return check


def _observables(key, v):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(key, f"expected a list, got {v!r}")
    allowed = ("widths", "counts", "onset", "modes")
    for i, x in enumerate(v):
        if x not in allowed:
            raise ConfigError(f"{key}[{i}]", f"must be one of {list(allowed)}, got {x!r}")
    return sorted(set(v))


_SEED = ("seed", 0, _int(0, 2**64 - 1))

_SIM = [
    ("n_agents", 500, _int(2)),
    ("length", 10.0, _float(positive=True)),
    ("radius", 1.0, _float(positive=True)),
    ("influence", "phi2", _influence),
    ("sigma", 0.0, _float(nonneg=True)),
    ("dt", 0.1, _float(positive=True)),
    ("t_end", 150.0, _float(positive=True)),
    ("boundary", "free", _choice("free", "reflecting", "periodic")),
    _SEED,
    ("sample_every", 10, _int(1)),
]

_DOMAIN = [
    ("influence", "phi2", _influence),
    ("sigma", 0.0, _float(nonneg=True)),
    ("length", 10.0, _float(positive=True)),
    ("radius", 1.0, _float(positive=True)),
    ("n_agents", 500, _int(2)),
    ("q_cap", 100.0, _float(positive=True)),
]

SCHEMAS: dict[str, list] = {
    "analyze": _DOMAIN + [
        ("refine", False, _bool),
        ("psi_curve", True, _bool),
        _SEED,
    ],
    "simulate": _SIM + [
        ("trajectory_file", "trajectory.csv", _path(optional=False)),
    ],
    "clusters": _SIM + [
        ("trajectory", None, _path()),
        ("gap", None, _float(positive=True, optional=True)),
        ("min_members", 1, _int(1)),
    ],
    "reduced": _DOMAIN + [
        ("report", None, _path()),
        ("boundary", "periodic", _choice("free", "reflecting", "periodic")),
        ("dt", None, _float(positive=True, optional=True)),
        ("t_max", None, _float(positive=True, optional=True)),
        ("record_every", 0, _int(0)),
        _SEED,
    ],
    "ensemble": _SIM + [
        ("n_realizations", 100, _int(1)),
        ("observables", ["counts", "widths"], _observables),
        ("mode_wavenumbers", [], _float_list()),
        ("stat_times", None, _float_list(optional=True)),
        ("gap", None, _float(positive=True, optional=True)),
        ("min_members", 10, _int(1)),
        ("workers", 1, _int(1)),
    ],
}


def _materialize(subcommand: str, raw: dict) -> dict:
    if subcommand not in SCHEMAS:
        raise ConfigError("subcommand", f"unknown subcommand {subcommand!r}")
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    schema = SCHEMAS[subcommand]
    known = {k for k, _, _ in schema}
    for key in raw:
        if key not in known:
            raise ConfigError(key, f"unknown key for {subcommand}")
    out = {}
    for key, default, check in schema:
        value = raw.get(key, default)
        out[key] = check(key, value) if key in raw else value
    if "gap" in out and out["gap"] is None:
        out["gap"] = out["radius"] / 2.0
    if subcommand in ("simulate", "clusters", "ensemble") and out["t_end"] < out["dt"]:
        raise ConfigError("t_end", "must be at least dt")
    return out


def parse_config(
    subcommand: str,
    source: Any = None,
    overrides: Optional[dict] = None,
) -> dict:
    """Resolved config for a subcommand with every default filled in.

    ``source`` is a path to a JSON file, an already-decoded dict, or None
    for the defaults; ``overrides`` (e.g. a ``--seed`` flag) win over both.
    """
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = dict(source)
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError("<file>", f"config file {str(path)!r} not found")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    if overrides:
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    return _materialize(subcommand, raw)


def write_config(config: dict, path) -> None:
    """Write a resolved config as JSON (atomically)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
