"""Checkpoint files: a JSON manifest followed by a raw little-endian float64 payload.

File layout::

    b"MHNC1" | u64 manifest_len | manifest (utf-8 JSON) | payload

The manifest records the model config, the training step and, per tensor,
its name, shape and byte offset into the payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import ConfigError, FormatError

MAGIC = b"MHNC1"
_LEN = struct.Struct("<Q")


def save_checkpoint(params, path, config=None, step=0, extra=None):
    entries = []
    offset = 0
    for name, t in params.items():
        nbytes = t.data.size * 8
        entries.append({"name": name, "shape": list(t.data.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    manifest = {"config": config, "step": int(step), "tensors": entries, "payload_bytes": offset}
    if extra:
        manifest["extra"] = extra
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        for t in params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Return ``(manifest, {name: array})`` after validating the layout."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)", offset=0)
    pos = len(MAGIC)
    if len(raw) < pos + _LEN.size:
        raise FormatError(f"{path}: truncated manifest length", offset=pos)
    (mlen,) = _LEN.unpack_from(raw, pos)
    pos += _LEN.size
    if len(raw) < pos + mlen:
        raise FormatError(f"{path}: truncated manifest", offset=pos)
    try:
        manifest = json.loads(raw[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest ({exc})", offset=pos) from None
    base = pos + mlen
    payload = raw[base:]
    tensors = {}
    end_prev = 0
    for i, e in enumerate(sorted(manifest["tensors"], key=lambda e: e["offset"])):
        shape = tuple(e["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if e["offset"] < end_prev:
            raise FormatError(f"{path}: tensor {e['name']!r} overlaps its predecessor", offset=base + e["offset"])
        if e["offset"] + nbytes > len(payload):
            raise FormatError(f"{path}: tensor {e['name']!r} runs past end of file", offset=base + e["offset"],
                              index=i)
        tensors[e["name"]] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8,
                                           offset=e["offset"]).reshape(shape).copy()
        end_prev = e["offset"] + nbytes
    return manifest, tensors


def load_checkpoint(params, path):
    """Copy a checkpoint's tensors into ``params``; returns the manifest.

    Names and shapes must match exactly; otherwise nothing is modified.
    """
    manifest, tensors = read_checkpoint(path)
    problems = []
    for name, t in params.items():
        if name not in tensors:
            problems.append(f"missing {name}")
        elif tensors[name].shape != t.data.shape:
            problems.append(f"{name}: checkpoint {tensors[name].shape} vs model {t.data.shape}")
    for name in tensors:
        if name not in params:
            problems.append(f"unexpected {name}")
    if problems:
        more = f" (+{len(problems) - 3} more)" if len(problems) > 3 else ""
        raise ConfigError(f"checkpoint {path} does not match the model: " + "; ".join(problems[:3]) + more)
    for name, t in params.items():
        t.data = tensors[name]
    return manifest
