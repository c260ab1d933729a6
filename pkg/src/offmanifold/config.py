"""Flat ``key = value`` experiment configs with typed defaults.

A config file looks like::

    # comments start with '#'
    d = 256
    divisors = 1, 2, 4, 8
    target_margin = none

Command-line ``key=value`` overrides are applied on top of the file.
"""

import math
from dataclasses import dataclass
from typing import Any, Callable


class ConfigError(ValueError):
    pass


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(parse):
    def inner(text):
        if text.strip().lower() in ("none", "", "full", "default"):
            return None
        return parse(text)

    return inner


def _list_of(parse):
    def inner(text):
        return [parse(p) for p in text.split(",") if p.strip()]

    return inner


def _parse_float(text):
    text = text.strip()
    if text.startswith("sqrt(") and text.endswith(")"):
        return math.sqrt(float(text[5:-1]))
    return float(text)


PARSERS = {
    "int": lambda s: int(s.strip()),
    "float": _parse_float,
    "str": lambda s: s.strip(),
    "bool": _parse_bool,
    "int?": _optional(lambda s: int(s.strip())),
    "float?": _optional(_parse_float),
    "str?": _optional(lambda s: s.strip()),
    "floats": _list_of(_parse_float),
    "ints": _list_of(lambda s: int(s.strip())),
    "strs": _list_of(lambda s: s.strip()),
}


@dataclass(frozen=True)
class Option:
    name: str
    kind: str
    default: Any
    help: str = ""
    check: Callable = None

    def parse(self, text):
        try:
            value = PARSERS[self.kind](text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for '{self.name}': {text!r} ({exc})") from None
        if self.check is not None and value is not None:
            msg = self.check(value)
            if msg:
                raise ConfigError(f"bad value for '{self.name}': {msg}")
        return value


def read_pairs(path):
    """Parse a key-value file into ``[(key, raw_value, line_number)]``."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            pairs.append((key.strip(), value.strip(), lineno))
    return pairs


def resolve(options, file_path=None, overrides=()):
    """Defaults, then the file, then overrides.  Unknown keys raise ConfigError naming the key."""
    table = {opt.name: opt for opt in options}
    values = {opt.name: opt.default for opt in options}
    sources = []
    if file_path:
        sources.extend((k, v, f"{file_path}:{n}") for k, v, n in read_pairs(file_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        k, v = item.split("=", 1)
        sources.append((k.strip(), v, "command line"))
    for key, raw, where in sources:
        if key not in table:
            raise ConfigError(f"unknown config key '{key}' ({where})")
        values[key] = table[key].parse(raw)
    return values


def describe(options):
    """Help text listing every key with its default."""
    lines = ["config keys (defaults in brackets):"]
    for opt in options:
        default = opt.default
        if isinstance(default, list):
            default = ",".join(str(v) for v in default)
        lines.append(f"  {opt.name:<18} [{default}]  {opt.help}")
    return "\n".join(lines)
