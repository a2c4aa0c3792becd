"""Flat ``key = value`` run configuration with a strict schema.

The format is intentionally minimal: one setting per line, ``#`` comments,
UTF-8.  Unknown keys are a hard error so a typo never silently falls back
to a default.
"""

from __future__ import annotations

import hashlib

from .datasets import DATASET_NAMES
from .errors import ConfigError
from .pdmp import KINDS, POTENTIALS
from .ratio import OMEGAS

_BOOL = {"true": True, "false": False, "1": True, "0": False}


def _bool(raw: str) -> bool:
    try:
        return _BOOL[raw.lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {raw!r}") from None


def _choice(*options):
    def parse(raw: str):
        if raw not in options:
            raise ConfigError(f"expected one of {options}, got {raw!r}")
        return raw
    return parse


def _positive(kind):
    def parse(raw: str):
        value = kind(raw)
        if value <= 0:
            raise ConfigError(f"expected a positive value, got {raw!r}")
        return value
    return parse


def _nonneg(kind):
    def parse(raw: str):
        value = kind(raw)
        if value < 0:
            raise ConfigError(f"expected a non-negative value, got {raw!r}")
        return value
    return parse


# key -> (parser, default); None default means "required when used"
SCHEMA = {
    "process": (_choice(*KINDS), None),
    "potential": (_choice(*POTENTIALS), "gaussian"),
    "dataset": (_choice(*DATASET_NAMES), None),
    "data": (str, None),  # CSV path; alternative to a named dataset
    "d": (_positive(int), 2),
    "t_f": (_positive(float), 5.0),
    "lambda_r": (_nonneg(float), 1.0),
    "omega": (_choice(*OMEGAS), "uniform"),
    "hidden_width": (_positive(int), 128),
    "n_blocks": (_positive(int), 4),
    "time_embed_dim": (_positive(int), 32),
    "mixture_components": (_positive(int), 8),
    "steps": (_positive(int), 2000),
    "batch_size": (_positive(int), 512),
    "lr": (_positive(float), 5e-4),
    "coord_subsample": (_nonneg(int), 0),
    "backward_steps": (_positive(int), 100),
    "init_mode": (_choice("base", "learned"), "base"),
    "n_samples": (_positive(int), 10000),
    "n_data": (_positive(int), 100000),
    "metrics": (str, "mmd"),
    "seed": (_nonneg(int), 0),
    "output_dir": (str, "."),
}


def parse_config(text: str) -> dict:
    """Parse the flat format, apply defaults, and reject unknown keys."""
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(raw)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    for key, (_, default) in SCHEMA.items():
        values.setdefault(key, default)
    return values


def load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")


def config_hash(cfg: dict) -> str:
    """Stable hash of the effective configuration (defaults included)."""
    canon = "\n".join(f"{k} = {cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
