"""Versioned binary checkpoint container.

Layout: 4-byte magic "HCKP", little-endian u32 format version, u64 byte
length of a JSON manifest, the manifest itself, then each array's raw
little-endian bytes in manifest order. The manifest records name, dtype,
and shape per array plus a free-form JSON `meta` block (step counters,
config snapshot, optimizer scalars).

Arrays keep their native float width: double-precision runs round-trip
bit-for-bit, which the resume contract depends on. save -> load -> save
reproduces identical bytes; array order is canonicalized by name.
"""

import json
import struct

import numpy as np

from .errors import DataError, FormatError

MAGIC = b"HCKP"
VERSION = 1

_ALLOWED = {"<f4", "<f8"}


def save(path, arrays, meta=None):
    """Write named arrays plus a JSON-serializable meta block."""
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype = arr.dtype.newbyteorder("<")
        if dtype.str not in _ALLOWED:
            raise ValueError(f"{name}: unsupported dtype {arr.dtype}; arrays must be float")
        arr = arr.astype(dtype, copy=False)
        entries.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    manifest = json.dumps({"arrays": entries, "meta": meta or {}},
                          sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load(path):
    """Returns (arrays dict, meta dict)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, manifest_len = struct.unpack_from("<IQ", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    body_start = 16 + manifest_len
    if len(raw) < body_start:
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:body_start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt manifest: {exc}") from exc
    arrays = {}
    pos = body_start
    for entry in manifest["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if len(raw) < pos + nbytes:
            raise FormatError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
            offset=pos).reshape(shape).copy()
        pos += nbytes
    return arrays, manifest.get("meta", {})


def params_to_arrays(params, prefix="param."):
    return {prefix + name: p.values for name, p in params.items()}


def load_params(params, arrays, prefix="param.", strict=True):
    """Copy stored arrays into live parameter tensors by name.

    With strict off, names missing on either side are tolerated and
    reported; shape mismatches always fail.
    """
    missing = []
    for name, p in params.items():
        key = prefix + name
        if key not in arrays:
            missing.append(name)
            continue
        stored = arrays[key]
        if tuple(stored.shape) != tuple(p.values.shape):
            raise FormatError(
                f"{name}: stored shape {stored.shape} != model shape {p.values.shape}")
        p.values[...] = stored.astype(p.values.dtype, copy=False)
    unexpected = [k[len(prefix):] for k in arrays
                  if k.startswith(prefix) and k[len(prefix):] not in params]
    if strict and (missing or unexpected):
        raise FormatError(
            f"parameter mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
    return missing, unexpected
