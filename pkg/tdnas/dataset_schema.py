# tdnas/dataset_schema.py
"""
SYND dataset file.

  char[4]  magic "SYND"
  uint32   version (1)
  uint32   num sequences N
  uint32   frames per sequence T
  uint32   feature dim D
  uint32   num classes K
  then per sequence: T*D float64 features, T int32 labels

All fields little-endian.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence, Tuple

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"SYND"
VERSION = 1
HEADER_STRUCT = struct.Struct("<4sIIIII")


@dataclass
class Dataset:
    """Equal-length sequences: features (N, T, D) float64, labels (N, T) in [0, K)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 3 or self.labels.shape != self.features.shape[:2]:
            raise ShapeError(
                f"features {self.features.shape} and labels {self.labels.shape} do not pair up"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        return iter(zip(self.features, self.labels))

    @property
    def frames(self) -> int:
        return self.features.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


def dataset_to_bytes(d: Dataset) -> bytes:
    n, t, dim = d.features.shape
    parts = [HEADER_STRUCT.pack(MAGIC, VERSION, n, t, dim, d.num_classes)]
    for feats, labels in d:
        parts.append(feats.astype("<f8").tobytes())
        parts.append(labels.astype("<i4").tobytes())
    return b"".join(parts)


def bytes_to_dataset(payload: bytes) -> Dataset:
    if len(payload) < HEADER_STRUCT.size:
        raise FormatError(f"file too short for a SYND header ({len(payload)} bytes)", len(payload))
    magic, version, n, t, dim, k = HEADER_STRUCT.unpack_from(payload, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported SYND version {version}", 4)
    if t < 1 or dim < 1 or k < 1:
        raise FormatError(f"invalid counts T={t} D={dim} K={k}", 12)

    seq_bytes = t * dim * 8 + t * 4
    expected = HEADER_STRUCT.size + n * seq_bytes
    if len(payload) < expected:
        offset = HEADER_STRUCT.size + (len(payload) - HEADER_STRUCT.size) // seq_bytes * seq_bytes
        raise FormatError(f"truncated: expected {expected} bytes, got {len(payload)}", offset)
    if len(payload) > expected:
        raise FormatError(f"{len(payload) - expected} trailing bytes", expected)

    features = np.empty((n, t, dim), dtype=np.float64)
    labels = np.empty((n, t), dtype=np.int64)
    offset = HEADER_STRUCT.size
    for i in range(n):
        features[i] = np.frombuffer(payload, dtype="<f8", count=t * dim, offset=offset).reshape(t, dim)
        offset += t * dim * 8
        lab = np.frombuffer(payload, dtype="<i4", count=t, offset=offset)
        bad = np.flatnonzero((lab < 0) | (lab >= k))
        if bad.size:
            raise FormatError(f"label {int(lab[bad[0]])} outside [0, {k})", offset + 4 * int(bad[0]))
        labels[i] = lab
        offset += t * 4
    return Dataset(features, labels, k)


def save_dataset(d: Dataset, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(d))
    return path


def load_dataset(path: Path) -> Dataset:
    with open(path, "rb") as f:
        return bytes_to_dataset(f.read())
