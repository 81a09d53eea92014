"""Flat ``key = value`` configuration files.

Lines are ``key = value``; ``#`` starts a comment; nested sections are spelled
with dots (``net.channels = 32,64,128,256``).
"""
from __future__ import annotations

from .errors import ConfigError


def parse_config_text(text: str, source="<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def read_config(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_config_text(fh.read(), source=str(path))


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def format_config(values: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in values.items())


def write_config(values: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_config(values))


def to_bool(key, value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def to_int(key, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def to_float(key, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def to_int_list(key, value: str) -> tuple[int, ...]:
    parts = [p for p in value.replace(" ", "").split(",") if p]
    if not parts:
        raise ConfigError(f"{key}: expected a comma-separated list")
    return tuple(to_int(key, p) for p in parts)


def to_float_list(key, value: str) -> tuple[float, ...]:
    parts = [p for p in value.replace(" ", "").split(",") if p]
    if not parts:
        raise ConfigError(f"{key}: expected a comma-separated list")
    return tuple(to_float(key, p) for p in parts)
