"""Binary per-frame feature store.

Layout: the 5-byte magic ``MHNF1`` followed by records, each::

    u32 id_len | id (utf-8) | u32 F | u32 D_app | u32 D_mot
    | F*D_app f32 appearance | F*D_mot f32 motion

All integers and floats are little-endian. Every record in a file must share
the first record's feature widths.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError
from ..sampling import FeatureRecord

MAGIC = b"MHNF1"
_HEAD = struct.Struct("<III")
_U32 = struct.Struct("<I")


def _pack(record):
    vid = record.video_id.encode("utf-8")
    F, d_app = record.appearance.shape
    d_mot = record.motion.shape[1]
    return b"".join([
        _U32.pack(len(vid)), vid, _HEAD.pack(F, d_app, d_mot),
        np.ascontiguousarray(record.appearance, dtype="<f4").tobytes(),
        np.ascontiguousarray(record.motion, dtype="<f4").tobytes(),
    ])


def write_features(path, records):
    """Write an iterable of FeatureRecord; returns the number written."""
    n = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for rec in records:
            fh.write(_pack(rec))
            n += 1
    return n


class FeatureReader:
    """Stream records from a feature file one at a time."""

    def __init__(self, path):
        self.path = path

    def __iter__(self):
        dims = None
        with open(self.path, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise FormatError(f"{self.path}: bad magic {magic!r}", offset=0)
            index = 0
            while True:
                start = fh.tell()
                raw = fh.read(_U32.size)
                if not raw:
                    return
                if len(raw) < _U32.size:
                    raise FormatError("truncated id length", offset=start, index=index)
                (id_len,) = _U32.unpack(raw)
                vid = fh.read(id_len)
                head = fh.read(_HEAD.size)
                if len(vid) < id_len or len(head) < _HEAD.size:
                    raise FormatError("truncated record header", offset=start, index=index)
                F, d_app, d_mot = _HEAD.unpack(head)
                if F < 1:
                    raise FormatError("record has zero frames", offset=start, index=index)
                if dims is None:
                    dims = (d_app, d_mot)
                elif dims != (d_app, d_mot):
                    raise FormatError(f"feature widths {(d_app, d_mot)} disagree with file widths {dims}",
                                      offset=start, index=index)
                body_at = fh.tell()
                n_app, n_mot = F * d_app, F * d_mot
                body = fh.read(4 * (n_app + n_mot))
                if len(body) < 4 * (n_app + n_mot):
                    raise FormatError("truncated feature payload", offset=body_at + len(body), index=index)
                flat = np.frombuffer(body, dtype="<f4")
                try:
                    vid_s = vid.decode("utf-8")
                except UnicodeDecodeError:
                    raise FormatError("video id is not utf-8", offset=start + _U32.size, index=index)
                yield FeatureRecord(
                    vid_s,
                    flat[:n_app].reshape(F, d_app).astype(np.float64),
                    flat[n_app:].reshape(F, d_mot).astype(np.float64),
                )
                index += 1


def read_features(path):
    return FeatureReader(path)


def load_feature_map(path):
    """Read a whole file into ``{video_id: FeatureRecord}``."""
    return {rec.video_id: rec for rec in FeatureReader(path)}
