"""Versioned binary checkpoint files.

Layout: magic | u32 format version | u64 header length | header JSON (utf-8)
| raw tensor payload. The header records the config hash, free-form JSON
metadata, and a name -> (dtype, shape, offset) table; payload tensors are
little-endian, C-order, concatenated in sorted-name order so identical
contents always produce identical bytes.
"""

import hashlib
import json
import struct

import numpy as np

MAGIC = b"RORC"
FORMAT_VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8"}


class CheckpointError(ValueError):
    pass


class HashMismatchError(CheckpointError):
    pass


def config_hash(text):
    return hashlib.sha256(text.encode()).hexdigest()


def _code(a):
    if a.dtype.kind == "f":
        return "f8"
    if a.dtype.kind in "iu":
        return "i8"
    raise CheckpointError(f"unsupported dtype {a.dtype}")


def save_checkpoint(path, arrays, meta, cfg_hash):
    names = sorted(arrays)
    table = {}
    blobs = []
    offset = 0
    for n in names:
        a = np.ascontiguousarray(np.asarray(arrays[n]), dtype=None)
        code = _code(a)
        raw = a.astype(_DTYPES[code]).tobytes(order="C")
        table[n] = {"dtype": code, "shape": list(a.shape), "offset": offset}
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"config_hash": cfg_hash, "meta": meta, "tensors": table}, sort_keys=True
    ).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def load_checkpoint(path, expected_hash=None):
    """Returns (arrays, meta, config_hash). With expected_hash set, a stored
    hash that differs raises HashMismatchError."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        payload = f.read()
    cfg_hash = header["config_hash"]
    if expected_hash is not None and cfg_hash != expected_hash:
        raise HashMismatchError(
            f"{path}: checkpoint config hash {cfg_hash[:12]} != expected {expected_hash[:12]}"
        )
    arrays = {}
    for name, rec in header["tensors"].items():
        dt = np.dtype(_DTYPES[rec["dtype"]])
        count = int(np.prod(rec["shape"])) if rec["shape"] else 1
        start = rec["offset"]
        a = np.frombuffer(payload, dtype=dt, count=count, offset=start)
        arrays[name] = a.reshape(rec["shape"]).astype(dt.newbyteorder("=")).copy()
    return arrays, header["meta"], cfg_hash
