"""FPK1 binary packs for feature matrices and classifier heads, plus CSV input.

Layout (all little-endian)::

    offset  size  field
    0       4     magic b"FPK1"
    4       2     version (u16, currently 1)
    6       1     dtype code (u8: 0 = float32, 1 = float64)
    7       1     flags (u8: bit0 labels present, bit1 tag present)
    8       8     N  rows (u64)
    16      8     m  columns (u64)
    24      8     K  number of classes (u64, 0 if unknown)
    32      ...   N*m payload values, row-major
    ...     4*N   labels as u32 (if bit0)
    ...     2+L   tag as u16 byte length + UTF-8 bytes (if bit1)

Writers always emit float64; float32 payloads are widened on read.
A classifier head is stored as an (m+1) x K pack whose last row is the bias.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from react_ood.core import NumericError, ReactError, ShapeError, as_matrix

MAGIC = b"FPK1"
VERSION = 1
HEADER = struct.Struct("<4sHBBQQQ")
FLAG_LABELS = 0x01
FLAG_TAG = 0x02
DEFAULT_BYTE_BUDGET = 1 << 30

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ReactError):
    """Malformed FPK1 input."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class SizeLimitError(FormatError):
    """Declared payload exceeds the byte budget or overflows."""


@dataclass(eq=False)
class FeaturePack:
    """N x m activations with optional integer labels and a dataset tag."""

    features: np.ndarray
    labels: np.ndarray | None = None
    tag: str = ""
    n_classes: int = 0

    def __post_init__(self) -> None:
        self.features = as_matrix(self.features, "features")
        n, m = self.features.shape
        if n == 0 or m == 0:
            raise ShapeError(f"feature pack must be non-empty, got {n}x{m}", (n, m))
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise ShapeError(f"expected {n} labels, got shape {labels.shape}", labels.shape)
            if labels.size and (labels.min() < 0 or not np.all(labels == np.round(labels))):
                raise ValueError("labels must be non-negative integers")
            self.labels = labels.astype(np.int64)
            if self.n_classes and labels.max() >= self.n_classes:
                raise ValueError(f"label {labels.max()} out of range for K={self.n_classes}")
        if len(self.tag.encode("utf-8")) > 0xFFFF:
            raise ValueError("tag too long")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    def with_features(self, features: np.ndarray) -> "FeaturePack":
        return FeaturePack(features, self.labels, self.tag, self.n_classes)

    def __eq__(self, other: object) -> bool:
        # bit-level equality so that -0.0 != 0.0 and NaN payloads would compare
        if not isinstance(other, FeaturePack):
            return NotImplemented
        if self.tag != other.tag or self.n_classes != other.n_classes:
            return False
        if self.features.shape != other.features.shape:
            return False
        if self.features.tobytes() != other.features.tobytes():
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


@dataclass(eq=False)
class ClassifierHead:
    """Final linear layer: ``logits = features @ weights + bias``."""

    weights: np.ndarray
    bias: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.weights = as_matrix(self.weights, "weights")
        if self.bias is None:
            self.bias = np.zeros(self.weights.shape[1])
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(
                f"bias length {self.bias.size} does not match K={self.weights.shape[1]}",
                self.bias.shape,
                self.weights.shape,
            )
        if not np.all(np.isfinite(self.bias)):
            raise NumericError("bias contains non-finite entries")

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def k(self) -> int:
        return self.weights.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        features = as_matrix(features, "features")
        if features.shape[1] != self.m:
            raise ShapeError(
                f"features have width {features.shape[1]}, head expects {self.m}",
                features.shape,
                self.weights.shape,
            )
        return features @ self.weights + self.bias


def write_pack(pack: FeaturePack, sink: BinaryIO) -> None:
    flags = 0
    if pack.labels is not None:
        flags |= FLAG_LABELS
    tag = pack.tag.encode("utf-8")
    if tag:
        flags |= FLAG_TAG
    sink.write(HEADER.pack(MAGIC, VERSION, 1, flags, pack.n, pack.m, pack.n_classes))
    sink.write(np.ascontiguousarray(pack.features, dtype="<f8").tobytes())
    if pack.labels is not None:
        if pack.labels.size and pack.labels.max() > 0xFFFFFFFF:
            raise ValueError("label does not fit in u32")
        sink.write(pack.labels.astype("<u4").tobytes())
    if tag:
        sink.write(struct.pack("<H", len(tag)))
        sink.write(tag)


def _read_exact(source: BinaryIO, size: int, what: str) -> bytes:
    data = source.read(size)
    if len(data) != size:
        raise TruncatedError(f"truncated {what}: expected {size} bytes, got {len(data)}")
    return data


def read_pack(source: BinaryIO, byte_budget: int = DEFAULT_BYTE_BUDGET) -> FeaturePack:
    head = source.read(HEADER.size)
    if len(head) < 4 or head[:4] != MAGIC:
        raise BadMagicError(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
    if len(head) != HEADER.size:
        raise TruncatedError("truncated header")
    _, version, dtype_code, flags, n, m, k = HEADER.unpack(head)
    if version != VERSION:
        raise FormatError(f"unsupported FPK1 version {version}")
    if dtype_code not in _DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}")
    dtype = _DTYPES[dtype_code]
    payload = n * m * dtype.itemsize + (4 * n if flags & FLAG_LABELS else 0)
    if payload > byte_budget:
        raise SizeLimitError(f"declared payload of {payload} bytes exceeds budget {byte_budget}")
    raw = _read_exact(source, n * m * dtype.itemsize, "payload")
    features = np.frombuffer(raw, dtype=dtype).astype(np.float64).reshape(n, m)
    labels = None
    if flags & FLAG_LABELS:
        labels = np.frombuffer(_read_exact(source, 4 * n, "labels"), dtype="<u4").astype(np.int64)
    tag = ""
    if flags & FLAG_TAG:
        (length,) = struct.unpack("<H", _read_exact(source, 2, "tag length"))
        tag = _read_exact(source, length, "tag").decode("utf-8")
    return FeaturePack(features, labels, tag, int(k))


def save_pack(pack: FeaturePack, path) -> None:
    with open(path, "wb") as fh:
        write_pack(pack, fh)


def load_pack(path, byte_budget: int = DEFAULT_BYTE_BUDGET) -> FeaturePack:
    with open(path, "rb") as fh:
        return read_pack(fh, byte_budget)


def head_to_pack(head: ClassifierHead) -> FeaturePack:
    return FeaturePack(np.vstack([head.weights, head.bias]), tag="head", n_classes=head.k)


def pack_to_head(pack: FeaturePack) -> ClassifierHead:
    if pack.n < 2:
        raise ShapeError("a head pack needs at least one weight row plus the bias row", (pack.n, pack.m))
    return ClassifierHead(pack.features[:-1], pack.features[-1])


def save_head(head: ClassifierHead, path) -> None:
    save_pack(head_to_pack(head), path)


def load_head(path) -> ClassifierHead:
    return pack_to_head(load_pack(path))


def read_csv_features(path, has_labels: bool = False, tag: str = "") -> FeaturePack:
    """Read a rectangular numeric CSV (',' delimiter, no quoting).

    With ``has_labels`` the last column holds integer class indices.
    Errors name the offending 1-based row.
    """
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, quoting=csv.QUOTE_NONE), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"ragged row {lineno}: expected {width} columns, got {len(row)}")
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise FormatError(f"non-numeric cell in row {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise FormatError(f"non-finite cell in row {lineno}")
            if has_labels:
                label = values.pop()
                if label != int(label) or label < 0:
                    raise FormatError(f"label in row {lineno} is not a non-negative integer")
                labels.append(int(label))
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return FeaturePack(np.array(rows), np.array(labels) if has_labels else None, tag)
