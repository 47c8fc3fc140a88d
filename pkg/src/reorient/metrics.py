"""Schema-versioned JSONL metrics files.

One JSON object per line, keys sorted, compact separators — identical rows
always serialize to identical bytes.  Readers keep every field they find,
known or not, so files written by newer code round-trip through older
tooling untouched.
"""

import json
import os

import numpy as np

SCHEMA = "metrics/1"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def encode_row(row):
    """Canonical bytes for one metrics row (schema field injected)."""
    out = {str(k): _jsonable(v) for k, v in row.items()}
    out.setdefault("schema", SCHEMA)
    return (json.dumps(out, sort_keys=True, separators=(",", ":")) + "\n").encode()


class MetricsWriter:
    """Append-only JSONL writer; every row is flushed to disk."""

    def __init__(self, path, append=False):
        self.path = str(path)
        self._f = open(self.path, "ab" if append else "wb")

    def write(self, **row):
        self._f.write(encode_row(row))
        self._f.flush()

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    """All rows as dicts, unknown fields intact; malformed lines raise."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"metrics file not found: {path}")
    rows = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{ln}: bad metrics line: {e}") from e
            if not isinstance(row, dict) or "schema" not in row:
                raise ValueError(f"{path}:{ln}: missing schema field")
            rows.append(row)
    return rows


def truncate_to(path, key, max_value):
    """Drop rows whose `key` exceeds `max_value` (resume support).

    Rewrites the file in place; rows without `key` are kept.
    """
    rows = read_metrics(path)
    keep = [r for r in rows if key not in r or r[key] <= max_value]
    with open(path, "wb") as f:
        for r in keep:
            f.write(encode_row(r))
    return len(rows) - len(keep)
