"""Single-file checkpoint container.

Byte layout (all integers little-endian):

    bytes 0..7    magic b"SEEDCKPT"
    bytes 8..15   uint64 length of the JSON manifest in bytes
    manifest      UTF-8 JSON: {"version": 1, "meta": {...}, "tensors":
                  [{"name": str, "dtype": "<f4"|"<f8", "shape": [int,...]}]}
    payload       raw C-order little-endian buffers, concatenated in
                  manifest order

meta is free-form JSON; training runs store the resolved model config there
so a checkpoint alone is enough to rebuild the model.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError

MAGIC = b"SEEDCKPT"
VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"),
           "<i8": np.dtype("<i8")}


def save_checkpoint(path, state, meta=None):
    """Write name->ndarray mapping plus a JSON meta blob."""
    entries = []
    buffers = []
    for name, arr in state.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            code = "<f4"
        elif arr.dtype == np.float64:
            code = "<f8"
        elif np.issubdtype(arr.dtype, np.integer):
            code = "<i8"
            arr = arr.astype(np.int64)
        else:
            raise DataError(f"checkpoint: unsupported dtype {arr.dtype} for {name}")
        buf = np.ascontiguousarray(arr).astype(_DTYPES[code], copy=False)
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        buffers.append(buf.tobytes(order="C"))
    manifest = json.dumps(
        {"version": VERSION, "meta": meta or {}, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint64(len(manifest)).tobytes())
        fh.write(manifest)
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path):
    """Return (state dict, meta dict). Validates magic, version, and sizes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    mlen = int(np.frombuffer(blob[8:16], dtype="<u8")[0])
    if 16 + mlen > len(blob):
        raise DataError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: manifest is not valid JSON: {exc}") from exc
    if manifest.get("version") != VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint version {manifest.get('version')}"
        )
    state = {}
    offset = 16 + mlen
    for entry in manifest["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise DataError(f"{path}: unknown dtype code {entry['dtype']}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = dtype.itemsize * count
        if offset + nbytes > len(blob):
            raise DataError(f"{path}: truncated payload at {entry['name']}")
        state[entry["name"]] = np.frombuffer(
            blob, dtype=dtype, count=count, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes")
    return state, manifest.get("meta", {})
