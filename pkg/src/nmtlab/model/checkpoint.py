"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"NMTLABCK"            8-byte magic
    uint32                 format version
    uint64                 header length H
    H bytes                UTF-8 JSON header (sorted keys, no whitespace)
    tensor data            raw C-order arrays, concatenated in header order

The header holds the model config, step counter, named RNG states, free
metadata and a ``tensors`` list of ``{name, dtype, shape, offset, nbytes}``
records.  Tensor names starting with ``opt/`` carry optimizer state.
Writing the same content twice yields identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .transformer import TransformerParams, param_shapes

MAGIC = b"NMTLABCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _header_bytes(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, params: TransformerParams, step: int = 0, rng_state: dict | None = None,
                    meta: dict | None = None, extra: dict | None = None) -> None:
    """Write atomically (temp file + rename)."""
    arrays = dict(params.tensors)
    for k, v in (extra or {}).items():
        arrays[k] = np.asarray(v)
    records, blobs, offset = [], [], 0
    for name in arrays:
        a = np.ascontiguousarray(arrays[name])
        dt = a.dtype.newbyteorder("<")
        data = a.astype(dt, copy=False).tobytes()
        records.append({"name": name, "dtype": dt.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {"version": VERSION, "config": params.cfg.to_dict(), "step": int(step),
              "rng": rng_state or {}, "meta": meta or {}, "tensors": records}
    hb = _header_bytes(header)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(hb)))
        f.write(hb)
        for b in blobs:
            f.write(b)
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(header, arrays)`` without interpreting them."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror or e}") from e
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen
    arrays = {}
    for rec in header["tensors"]:
        start = base + rec["offset"]
        buf = raw[start:start + rec["nbytes"]]
        if len(buf) != rec["nbytes"]:
            raise CheckpointError(f"{path}: truncated data for tensor {rec['name']!r}")
        arrays[rec["name"]] = np.frombuffer(buf, dtype=np.dtype(rec["dtype"])).reshape(rec["shape"]).copy()
    return header, arrays


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Load ``(params, header, extra_arrays)``; validates every tensor shape."""
    header, arrays = read_checkpoint(path)
    cfg = ModelConfig.from_dict(header["config"])
    if expect is not None and expect != cfg:
        diffs = [f"{k}: checkpoint {v!r} vs expected {getattr(expect, k)!r}"
                 for k, v in cfg.to_dict().items() if getattr(expect, k) != v]
        raise CheckpointError(f"{path}: config mismatch ({'; '.join(diffs)})")
    shapes = param_shapes(cfg)
    tensors = {}
    for name, shape in shapes.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if tuple(arrays[name].shape) != tuple(shape):
            raise CheckpointError(f"{path}: tensor {name!r} has shape {tuple(arrays[name].shape)}, "
                                  f"expected {tuple(shape)}")
        tensors[name] = arrays.pop(name)
    unknown = [n for n in arrays if not n.startswith("opt/")]
    if unknown:
        raise CheckpointError(f"{path}: unexpected tensor {unknown[0]!r}")
    return TransformerParams(cfg, tensors), header, arrays
