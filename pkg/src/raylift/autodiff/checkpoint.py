"""JSON checkpoint manifests with base64-encoded raw little-endian buffers."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

FORMAT = "raylift-checkpoint"
VERSION = 1


def encode_array(a):
    a = np.ascontiguousarray(a)
    le = a.astype(a.dtype.newbyteorder("<"), copy=False)
    return {
        "dtype": a.dtype.name,
        "shape": list(a.shape),
        "data": base64.b64encode(le.tobytes()).decode("ascii"),
    }


def decode_array(d):
    raw = base64.b64decode(d["data"])
    dt = np.dtype(d["dtype"]).newbyteorder("<")
    return np.frombuffer(raw, dtype=dt).astype(np.dtype(d["dtype"])).reshape(d["shape"])


def save_checkpoint(path, tensors, meta=None):
    """Write named arrays plus JSON metadata; reload is bit-exact."""
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta or {},
        "tensors": {name: encode_array(a) for name, a in sorted(tensors.items())},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    return {n: decode_array(d) for n, d in doc["tensors"].items()}, doc["meta"]
