"""Versioned JSON container for model weights.

Layout::

    {"format_version": 1, "kind": ..., "architecture": {...},
     "layers": [{"name", "shape", "dtype", "data": <base64 little-endian>}, ...],
     "meta": {...}}

Encoding is canonical (fixed key order, no whitespace variation), so equal
weights always serialize to identical bytes.
"""

from __future__ import annotations

import base64
import hashlib
import json
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from ..errors import DataError

FORMAT_VERSION = 1
_DTYPE = "<f8"


def encode_array(name: str, arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype=_DTYPE)
    return {
        "name": name,
        "shape": list(a.shape),
        "dtype": _DTYPE,
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_array(entry: Mapping) -> np.ndarray:
    if entry.get("dtype") != _DTYPE:
        raise DataError(f"unsupported dtype {entry.get('dtype')!r} for {entry.get('name')}")
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype=_DTYPE).reshape(entry["shape"]).astype(np.float64)


def dumps(kind: str, architecture: Mapping, tensors: Mapping[str, np.ndarray], meta: Mapping) -> bytes:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "architecture": architecture,
        "layers": [encode_array(name, arr) for name, arr in tensors.items()],
        "meta": meta,
    }
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8")


def loads(raw: bytes | str) -> tuple[str, dict, dict[str, np.ndarray], dict]:
    doc = json.loads(raw)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version!r}")
    tensors = {entry["name"]: decode_array(entry) for entry in doc["layers"]}
    return doc["kind"], doc["architecture"], tensors, doc["meta"]


def sha256_bytes(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())
