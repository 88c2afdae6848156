"""Flat-file formats for extracted features and labels.

Feature file: magic ``CTFT``, version byte, u32 count and dim, then
n*d little-endian float32 values row-major.  Labels travel separately
as a one-column CSV of {1, -1}.  Both round-trip losslessly.
"""

from __future__ import annotations

import struct

import numpy as np

FEATURES_MAGIC = b"CTFT"
FEATURES_VERSION = 1

_HEADER = struct.Struct("<4sBxxxII")


class FormatError(ValueError):
    """A data file does not match its declared format."""


def save_features(path: str, features: np.ndarray) -> None:
    X = np.ascontiguousarray(features, dtype="<f4")
    if X.ndim != 2:
        raise FormatError(f"features must be 2-D, got shape {X.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURES_MAGIC, FEATURES_VERSION, X.shape[0], X.shape[1]))
        fh.write(X.tobytes())


def load_features(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size or blob[:4] != FEATURES_MAGIC:
        raise FormatError(f"{path} is not a feature file")
    _magic, version, n, d = _HEADER.unpack_from(blob, 0)
    if version != FEATURES_VERSION:
        raise FormatError(f"unsupported feature file version {version}")
    expected = _HEADER.size + n * d * 4
    if len(blob) != expected:
        raise FormatError(f"feature file truncated: {len(blob)} bytes, expected {expected}")
    return (
        np.frombuffer(blob, dtype="<f4", count=n * d, offset=_HEADER.size)
        .reshape(n, d)
        .copy()
    )


def save_labels(path: str, labels) -> None:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if not np.all(np.isin(y, (-1, 1))):
        raise FormatError("labels must be +1 or -1")
    with open(path, "w") as fh:
        for v in y:
            fh.write(f"{int(v)}\n")


def load_labels(path: str) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                v = int(line)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: not an integer label: {line!r}") from exc
            if v not in (-1, 1):
                raise FormatError(f"{path}:{lineno}: labels must be 1 or -1, got {v}")
            values.append(v)
    if not values:
        raise FormatError(f"{path}: no labels found")
    return np.asarray(values, dtype=np.int64)
