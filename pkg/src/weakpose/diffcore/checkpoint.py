"""ParamStore persistence: a JSON manifest with base64 little-endian float64 payloads."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

FORMAT = "weakpose-params"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_array(a, dtype="<f8"):
    return base64.b64encode(np.ascontiguousarray(a, dtype=dtype).tobytes()).decode("ascii")


def decode_array(s, shape, dtype="<f8"):
    raw = base64.b64decode(s)
    arr = np.frombuffer(raw, dtype=dtype)
    if arr.size != int(np.prod(shape)):
        raise CheckpointError(f"payload holds {arr.size} values, manifest says {shape}")
    return arr.reshape(shape).astype(np.float64)


def store_to_dict(store, meta=None):
    entries = []
    for name, p in store.params.items():
        entries.append({
            "name": name,
            "shape": list(p.data.shape),
            "data": encode_array(p.data),
            "m": encode_array(store.m[name]),
            "v": encode_array(store.v[name]),
        })
    return {"format": FORMAT, "version": VERSION, "step": store.step, "meta": meta or {}, "params": entries}


def save_store(store, path, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(store_to_dict(store, meta), sort_keys=True))
    return path


def read_manifest(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {doc.get('format')!r} v{doc.get('version')}")
    return doc


def load_into(store, doc):
    """Copy values from a manifest into an already-built store (names and shapes must match)."""
    names = [e["name"] for e in doc["params"]]
    if set(names) != set(store.params):
        missing = set(store.params) ^ set(names)
        raise CheckpointError(f"checkpoint/network parameter mismatch: {sorted(missing)[:5]}")
    for e in doc["params"]:
        shape = tuple(e["shape"])
        p = store.params[e["name"]]
        if p.data.shape != shape:
            raise CheckpointError(f"{e['name']}: shape {shape} vs network {p.data.shape}")
        p.data[...] = decode_array(e["data"], shape)
        store.m[e["name"]][...] = decode_array(e["m"], shape)
        store.v[e["name"]][...] = decode_array(e["v"], shape)
    store.step = int(doc["step"])
    return store
