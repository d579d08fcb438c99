"""Strict dict -> dataclass conversion with dotted key paths in every error."""

from __future__ import annotations

from dataclasses import MISSING, fields

from .errors import ConfigError

_CHECKS = {
    "int": (lambda v: isinstance(v, int) and not isinstance(v, bool), "an integer"),
    "float": (lambda v: isinstance(v, (int, float)) and not isinstance(v, bool), "a number"),
    "bool": (lambda v: isinstance(v, bool), "true or false"),
    "str": (lambda v: isinstance(v, str), "a string"),
    "Optional[str]": (lambda v: v is None or isinstance(v, str), "a string or null"),
    "list[int]": (lambda v: isinstance(v, list) and all(_CHECKS["int"][0](x) for x in v), "a list of integers"),
    "list[str]": (lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v), "a list of strings"),
}


def strict_kwargs(cls, d, prefix: str) -> dict:
    """Constructor arguments for dataclass ``cls`` from ``d``, rejecting unknown or mistyped keys."""
    if not isinstance(d, dict):
        raise ConfigError(prefix, f"expected an object, got {type(d).__name__}")
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, val in d.items():
        path = f"{prefix}.{key}"
        if key not in known:
            raise ConfigError(path, f"unknown key (known: {', '.join(sorted(known))})")
        check, what = _CHECKS.get(known[key].type, (lambda v: True, ""))
        if not check(val):
            raise ConfigError(path, f"expected {what}, got {val!r}")
        out[key] = float(val) if known[key].type == "float" else val
    for name, f in known.items():
        if name not in out and f.default is MISSING and f.default_factory is MISSING:
            raise ConfigError(f"{prefix}.{name}", "missing required key")
    return out
