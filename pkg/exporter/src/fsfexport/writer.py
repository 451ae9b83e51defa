"""Minimal writer for the FSF v1 binary feature-file format.

Layout, little-endian throughout::

    bytes 0-3   magic "FSF1"
    bytes 4-7   u32 rows
    bytes 8-11  u32 dim
    byte  12    u8 flags (bit0 = has labels, bit1 = rows are unit-norm)
    then        rows x dim float32, row-major
    then        rows x int32 labels            (only if bit0)
    then        u32 json_len, then json_len bytes of UTF-8 JSON metadata

The metadata object must carry an integer ``"num_classes"``.  Files are
written atomically: the payload goes to a temporary sibling first and is
moved into place with ``os.replace``.
"""

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"FSF1"
HEADER = struct.Struct("<4sIIB")
FLAG_LABELS = 1
FLAG_NORMALIZED = 2


def fsf_bytes(
    data: np.ndarray,
    *,
    labels: np.ndarray | None = None,
    normalized: bool = False,
    metadata: dict,
) -> bytes:
    """Serialize one feature block to FSF v1 bytes."""
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise ValueError(f"data must be a non-empty 2-D matrix, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("data contains non-finite values")
    rows, dim = data.shape

    num_classes = metadata.get("num_classes")
    if not isinstance(num_classes, int) or isinstance(num_classes, bool):
        raise ValueError('metadata must carry an integer "num_classes"')

    flags = 0
    parts = [data.astype("<f4").tobytes()]
    if labels is not None:
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if labels.shape != (rows,):
            raise ValueError(f"labels must have shape ({rows},), got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(
                f"labels must lie in [0, {num_classes}), got "
                f"[{labels.min()}, {labels.max()}]")
        flags |= FLAG_LABELS
        parts.append(labels.astype("<i4").tobytes())
    if normalized:
        norms = np.linalg.norm(data, axis=1)
        if np.abs(norms - 1.0).max() > 1e-5:
            raise ValueError("normalized flag requested but rows are not unit norm")
        flags |= FLAG_NORMALIZED

    blob = json.dumps(metadata, separators=(",", ":"), sort_keys=True).encode()
    return b"".join([
        HEADER.pack(MAGIC, rows, dim, flags),
        *parts,
        struct.pack("<I", len(blob)),
        blob,
    ])


def write_fsf(
    path: str | Path,
    data: np.ndarray,
    *,
    labels: np.ndarray | None = None,
    normalized: bool = False,
    metadata: dict,
) -> Path:
    """Write one FSF file atomically and return its path."""
    path = Path(path)
    payload = fsf_bytes(data, labels=labels, normalized=normalized,
                        metadata=metadata)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path
