"""Binary vectors: sign binarization, Hamming distance, exact binary search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import SearchResult, as_vectors


@dataclass
class BinaryVectorSet:
    """Packed binary vectors, 8 components per byte, LSB-first within a byte."""

    data: np.ndarray  # (n, d/8) uint8
    d: int

    def __post_init__(self) -> None:
        if self.d % 8 != 0:
            raise ValueError("binary dimension must be a multiple of 8")
        if self.data.ndim != 2 or self.data.shape[1] != self.d // 8:
            raise ValueError("packed data shape does not match d")

    @property
    def n(self) -> int:
        return self.data.shape[0]


def median_thresholds(x: np.ndarray) -> np.ndarray:
    """Per-dimension medians; binarizing at these balances the bit rates."""
    return np.median(as_vectors(x), axis=0).astype(np.float32)


def binarize(x: np.ndarray, thresholds: np.ndarray | None = None) -> BinaryVectorSet:
    """Bit i = 1 iff x_i > threshold_i (strict); thresholds default to 0."""
    x = as_vectors(x)
    d = x.shape[1]
    if d % 8 != 0:
        raise ValueError("binary dimension must be a multiple of 8")
    if thresholds is None:
        thresholds = np.zeros(d, dtype=np.float32)
    thresholds = np.asarray(thresholds, dtype=np.float32)
    bits = (x > thresholds).astype(np.uint8)
    return BinaryVectorSet(np.packbits(bits, axis=1, bitorder="little"), d)


def unpack_binary(bset: BinaryVectorSet) -> np.ndarray:
    return np.unpackbits(bset.data, axis=1, bitorder="little")[:, : bset.d]


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Hamming distance between two packed codes (popcount of the XOR)."""
    a = np.ascontiguousarray(np.atleast_2d(a), dtype=np.uint8)
    b = np.ascontiguousarray(np.atleast_2d(b), dtype=np.uint8)
    if a.shape[1] != b.shape[1]:
        raise ValueError("code length mismatch")
    return int(_kernels.hamming_matrix(a, b)[0, 0])


def _topk_int_rows(dist: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    # composite integer keys give exact (distance, id) ordering
    nq, n = dist.shape
    cols = np.arange(n, dtype=np.uint64)
    keys = (dist.astype(np.uint64) << np.uint64(32)) | cols
    kk = min(k, n)
    part = np.partition(keys, kk - 1, axis=1)[:, :kk] if kk < n else keys
    part = np.sort(part, axis=1)
    ids = (part & np.uint64(0xFFFFFFFF)).astype(np.int64)
    vals = (part >> np.uint64(32)).astype(np.int32)
    if kk < k:
        ids = np.hstack([ids, np.full((nq, k - kk), -1, dtype=np.int64)])
        vals = np.hstack([vals, np.full((nq, k - kk), np.iinfo(np.int32).max,
                                        dtype=np.int32)])
    return ids, vals


class BinaryFlatIndex:
    """Exhaustive Hamming-distance search over packed binary codes."""

    def __init__(self, d: int):
        if d % 8 != 0:
            raise ValueError("binary dimension must be a multiple of 8")
        self.d = d
        self.codes = np.empty((0, d // 8), dtype=np.uint8)
        self.ids = np.empty(0, dtype=np.int64)

    @property
    def ntotal(self) -> int:
        return self.codes.shape[0]

    def add(self, v: "BinaryVectorSet | np.ndarray") -> None:
        self.add_with_ids(v, None)

    def add_with_ids(self, v: "BinaryVectorSet | np.ndarray",
                     ids: np.ndarray | None) -> None:
        data = v.data if isinstance(v, BinaryVectorSet) else np.atleast_2d(v)
        data = np.ascontiguousarray(data, dtype=np.uint8)
        if data.shape[1] != self.d // 8:
            raise ValueError("code size mismatch")
        if ids is None:
            ids = np.arange(self.ntotal, self.ntotal + data.shape[0], dtype=np.int64)
        self.codes = np.vstack([self.codes, data])
        self.ids = np.concatenate([self.ids, np.asarray(ids, dtype=np.int64)])

    def search(self, q: "BinaryVectorSet | np.ndarray", k: int) -> SearchResult:
        if k < 1:
            raise ValueError("k must be >= 1")
        data = q.data if isinstance(q, BinaryVectorSet) else np.atleast_2d(q)
        data = np.ascontiguousarray(data, dtype=np.uint8)
        if data.shape[1] != self.d // 8:
            raise ValueError("code size mismatch")
        dist = _kernels.hamming_matrix(data, self.codes)
        pos, vals = _topk_int_rows(dist, k)
        ids = np.where(pos >= 0, self.ids[np.maximum(pos, 0)] if self.ntotal else -1, -1)
        return SearchResult(ids, vals.astype(np.float32), k)


def binary_knn(index: BinaryFlatIndex, q, k: int) -> SearchResult:
    """Exact top-k by Hamming distance with id tie-breaks."""
    return index.search(q, k)
