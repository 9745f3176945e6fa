"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .energies import CATALOG
from .sim import INIT_KINDS


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


def _bool(text: str) -> bool | None:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    if t == "auto":
        return None
    raise ValueError(f"expected a boolean, got {text!r}")


def _auto_float(text: str) -> float | None:
    t = text.strip().lower()
    return None if t == "auto" else float(t)


def _matrix_or_scalar(text: str):
    """A scalar s (meaning s * I) or a JSON nested list."""
    t = text.strip()
    if t.startswith("["):
        return json.loads(t)
    return float(t)


def _str(text: str) -> str:
    return text.strip()


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


KEYS: dict[str, Key] = {
    "energy": Key(_str, "quadratic", "stored-energy name"),
    "p": Key(_auto_float, None, "growth exponent; must match the energy if given"),
    "c0": Key(float, 0.25, "strong quasiconvexity constant to test"),
    "epsilon": Key(float, 0.0, "regularisation strength"),
    "d": Key(int, 2, "dimension (2 or 3)"),
    "n": Key(int, 32, "grid points per axis"),
    "dt": Key(float, 1e-3, "time step"),
    "t_end": Key(float, 1.0, "final time"),
    "init.kind": Key(_str, "smooth-wave", "initial data: " + " | ".join(INIT_KINDS)),
    "init.amplitude": Key(float, 0.1, "initial data amplitude"),
    "init.N": Key(int, 4, "laminate frequency"),
    "init.F_mean": Key(_matrix_or_scalar, 0.0, "constant mode of F (scalar s means s I)"),
    "init.velocity": Key(float, 0.0, "L2 size of a random initial velocity"),
    "seed": Key(int, 0, "master RNG seed"),
    "output.dir": Key(_str, "run", "output directory"),
    "output.stride": Key(int, 10, "steps between snapshots"),
    "dealias": Key(_bool, None, "2/3-rule truncation of S (auto: p > 2)"),
    "reference.dir": Key(_str, "", "reference run directory"),
    "xi": Key(_matrix_or_scalar, 0.0, "base matrix for qc-test (scalar s means s I)"),
    "qc.restarts": Key(int, 6, "qc-test restarts"),
    "qc.max_iters": Key(int, 200, "qc-test descent iterations per restart"),
    "young.cells": Key(int, 4, "macro-cells per axis for young-measure"),
}


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value text`` pairs; later lines override earlier ones."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key (in {source}:{lineno})", key)
        out[key] = value
    return out


def read_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_text(text, str(path))


def resolve(raw: dict[str, str]) -> dict[str, Any]:
    """Typed, validated settings with defaults filled in."""
    cfg: dict[str, Any] = {k: spec.default for k, spec in KEYS.items()}
    for key, text in raw.items():
        if key not in KEYS:
            raise ConfigError("unknown key", key)
        try:
            cfg[key] = KEYS[key].parse(text)
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"bad value {text!r} ({exc})", key) from exc
    _validate(cfg)
    return cfg


def _validate(cfg: dict[str, Any]) -> None:
    if cfg["energy"] not in CATALOG:
        raise ConfigError(f"unknown energy {cfg['energy']!r}; choose from {sorted(CATALOG)}", "energy")
    W = CATALOG[cfg["energy"]]
    if cfg["d"] not in (2, 3):
        raise ConfigError("must be 2 or 3", "d")
    if cfg["d"] not in W.dims:
        raise ConfigError(f"energy {W.name} is defined only for d in {W.dims}", "d")
    if cfg["p"] is not None and cfg["p"] != W.p:
        raise ConfigError(f"energy {W.name} has p = {W.p:g}", "p")
    for key in ("n", "output.stride", "qc.restarts", "qc.max_iters", "young.cells"):
        if cfg[key] < 1:
            raise ConfigError("must be positive", key)
    for key in ("dt", "t_end"):
        if not cfg[key] > 0:
            raise ConfigError("must be positive", key)
    if cfg["epsilon"] < 0:
        raise ConfigError("must be >= 0", "epsilon")
    if cfg["c0"] < 0:
        raise ConfigError("must be >= 0", "c0")
    if cfg["init.kind"] not in INIT_KINDS:
        raise ConfigError(f"expected one of {INIT_KINDS}", "init.kind")
    for key in ("init.F_mean", "xi"):
        v = cfg[key]
        if isinstance(v, list):
            d = cfg["d"]
            if len(v) != d or any(not isinstance(r, list) or len(r) != d for r in v):
                raise ConfigError(f"must be a scalar or a {d}x{d} nested list", key)


def format_value(value: Any) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return json.dumps(value)
    return str(value)


def dump(cfg: dict[str, Any]) -> str:
    return "".join(f"{k} = {format_value(cfg[k])}\n" for k in sorted(cfg))
