"""Flat key=value configuration files.

One ``key = value`` pair per line, ``#`` starts a comment, blank lines are
ignored. Used for both scene configs and dataset parameter files.
"""

from __future__ import annotations

from dataclasses import dataclass


class ConfigError(ValueError):
    """Malformed or invalid configuration input."""


@dataclass(frozen=True)
class KVEntry:
    key: str
    value: str
    line: int


def parse_kv(text: str) -> dict[str, KVEntry]:
    """Parse a key=value document, preserving line numbers for diagnostics."""
    entries: dict[str, KVEntry] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} (first seen on line {entries[key].line})"
            )
        entries[key] = KVEntry(key, value, lineno)
    return entries


def as_int(entry: KVEntry) -> int:
    try:
        return int(entry.value)
    except ValueError:
        raise ConfigError(
            f"line {entry.line}: key {entry.key!r} expects an integer, got {entry.value!r}"
        ) from None


def as_float(entry: KVEntry) -> float:
    try:
        return float(entry.value)
    except ValueError:
        raise ConfigError(
            f"line {entry.line}: key {entry.key!r} expects a number, got {entry.value!r}"
        ) from None


def as_int_list(entry: KVEntry) -> list[int]:
    items = [s for s in entry.value.replace(" ", "").split(",") if s]
    if not items:
        raise ConfigError(f"line {entry.line}: key {entry.key!r} expects a comma-separated list")
    try:
        return [int(s) for s in items]
    except ValueError:
        raise ConfigError(
            f"line {entry.line}: key {entry.key!r} expects integers, got {entry.value!r}"
        ) from None
