"""Flat key-value run configuration files.

Format: one `key = value` per line, `#` starts a comment, blank lines
ignored.  Unknown keys are an error — a typo in a flag name must never
silently fall back to a default.
"""

import dataclasses

from .checkpoint import config_hash


def parse_kv_text(text, origin="<config>"):
    """Parse `key = value` lines into an ordered dict of strings."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{origin}:{ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ValueError(f"{origin}:{ln}: empty key")
        if key in out:
            raise ValueError(f"{origin}:{ln}: duplicate key {key!r}")
        out[key] = value
    return out


def load_kv(path):
    with open(path) as f:
        return parse_kv_text(f.read(), origin=str(path))


_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _coerce(name, value, ftype):
    if ftype is bool:
        low = value.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{name}: expected a boolean, got {value!r}")
    if ftype is int:
        return int(value)
    if ftype is float:
        return float(value)
    if ftype is str:
        return value
    raise ValueError(f"{name}: unsupported config field type {ftype}")


def apply_kv(cfg, kv):
    """New dataclass instance with `kv` overrides applied and type-checked.

    Rejects keys that are not fields of `cfg` (strict), naming them all.
    """
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    unknown = sorted(k for k in kv if k not in fields)
    if unknown:
        raise ValueError(
            f"unknown config key(s): {', '.join(unknown)}; "
            f"valid keys: {', '.join(sorted(fields))}")
    updates = {}
    for k, v in kv.items():
        updates[k] = _coerce(k, v, fields[k].type if isinstance(fields[k].type, type)
                             else _resolve_type(fields[k]))
    return dataclasses.replace(cfg, **updates)


def _resolve_type(f):
    # dataclass fields defined with string annotations (from __future__ or
    # modern syntax) resolve through the default's type
    if f.type in ("int", "float", "str", "bool"):
        return {"int": int, "float": float, "str": str, "bool": bool}[f.type]
    if f.default is not dataclasses.MISSING and f.default is not None:
        return type(f.default)
    raise ValueError(f"cannot infer type for config field {f.name}")


def canonical_text(cfg, exclude=()):
    """Sorted `key = value` rendering of a config dataclass.

    `exclude` drops fields by name — used to hash only the
    experiment-defining fields, leaving out per-replica ones (seed, paths).
    """
    lines = []
    for f in sorted(dataclasses.fields(cfg), key=lambda f: f.name):
        if f.name in exclude:
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def hash_config(cfg, exclude=()):
    return config_hash(canonical_text(cfg, exclude=exclude))
