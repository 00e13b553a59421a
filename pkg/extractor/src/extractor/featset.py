"""Minimal FEATSET writer.

FEATSET is the interchange format between this extractor and downstream
training tools: a 64-byte little-endian header (magic "FSET", version,
a labels-present flag, record/layer/dim/class counts) followed by the
float32 feature payload in record-major order and, when labeled, one
int32 label per record (-1 for absent).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FSET"
VERSION = 1
HEADER_SIZE = 64


def write_featset(features: np.ndarray, labels: np.ndarray | None,
                  n_classes: int, path) -> None:
    """Write features of shape (n, n_layers, dim) as a FEATSET file.

    Output bytes depend only on the arguments, so equal inputs produce
    byte-identical files.
    """
    if features.ndim != 3:
        raise ValueError(f"expected (n, n_layers, dim), got {features.shape}")
    if not np.isfinite(features).all():
        raise ValueError("refusing to write non-finite features")
    n, nl, d = features.shape
    if labels is not None and len(labels) != n:
        raise ValueError("label count does not match record count")
    header = struct.pack("<4sHHIIII", MAGIC, VERSION,
                         0 if labels is None else 1, n, nl, d, n_classes)
    header += b"\x00" * (HEADER_SIZE - len(header))
    blob = header + np.ascontiguousarray(features, dtype="<f4").tobytes()
    if labels is not None:
        blob += np.ascontiguousarray(labels, dtype="<i4").tobytes()
    Path(path).write_bytes(blob)
