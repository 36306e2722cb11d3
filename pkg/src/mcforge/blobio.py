"""Versioned binary container: JSON header + raw little-endian array payloads.

Layout:
    magic line (ascii, ends with newline)
    8-byte little-endian header length
    header JSON (utf-8); its "arrays" entry lists (name, shape, dtype) in
    payload order
    concatenated raw array bytes, row-major, little-endian
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4"}


def write_blob(path, magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> None:
    if not magic.endswith(b"\n"):
        raise ValueError("magic must end with newline")
    manifest = []
    for name, arr in arrays.items():
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported array dtype {dtype} for {name!r}")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
    full_header = dict(header)
    full_header["arrays"] = manifest
    blob = json.dumps(full_header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name, arr in arrays.items():
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[str(arr.dtype)]).tobytes())


def read_blob(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        got = fh.read(len(magic))
        if got != magic:
            raise ValueError(f"bad magic in {Path(path).name}: expected {magic!r}, got {got!r}")
        size = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(size).decode("utf-8"))
        arrays = {}
        for entry in header.pop("arrays"):
            shape = tuple(entry["shape"])
            dtype = np.dtype(_DTYPES[entry["dtype"]])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
            arrays[entry["name"]] = data.reshape(shape).astype(entry["dtype"])
    return header, arrays
