"""Experiment configs: TOML (``.toml``) or JSON (anything else)."""

from __future__ import annotations

import json
import os
import sys

from evject.errors import ConfigurationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_ENV = "EVJECT_SEED"


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        if str(path).endswith(".toml"):
            return tomllib.loads(raw.decode("utf-8"))
        return json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"config {path} is not valid: {exc}") from exc


def seed_override(seed):
    """The ``EVJECT_SEED`` environment value if set, else ``seed``."""
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return seed
    try:
        return int(env)
    except ValueError:
        raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def take(cfg, key, kind, default=None, required=False):
    """Typed config field with a field-named error."""
    if key not in cfg:
        if required:
            raise ConfigurationError(f"config field '{key}' is required")
        return default
    value = cfg[key]
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind in (int, float) and isinstance(value, bool):
            raise TypeError
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise TypeError
        if kind is list:
            if not isinstance(value, list):
                raise TypeError
            return value
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"config field '{key}' must be {kind.__name__}, got {value!r}") from None


def check_keys(cfg, allowed, section="config"):
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown {section} field(s): {', '.join(unknown)}")
