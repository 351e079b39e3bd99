"""Exact brute-force k-NN and range search over uncompressed vectors."""

from __future__ import annotations

import numpy as np

from . import config
from .core import (Index, Metric, METRIC_L2, MetricKind, RangeResult, SearchResult,
                   as_vectors, pairwise_distances, topk_rows)

_QUERY_CHUNK = 256  # caps the (chunk, ntotal) distance matrix


class FlatIndex(Index):
    """Stores raw float32 vectors; every search is exact.

    Squared norms of the stored vectors are cached for the L2/IP
    matrix-multiplication path.
    """

    def __init__(self, d: int, metric: Metric = METRIC_L2):
        super().__init__(d, metric)
        self.vectors = np.empty((0, d), dtype=np.float32)
        self.ids = np.empty(0, dtype=np.int64)
        self.norms = np.empty(0, dtype=np.float32)
        self._pos_of_id: dict[int, int] | None = {}

    def _add(self, x: np.ndarray, ids: np.ndarray) -> None:
        self.vectors = np.vstack([self.vectors, x])
        self.ids = np.concatenate([self.ids, ids])
        self.norms = np.concatenate([self.norms, np.einsum("nd,nd->n", x, x)])
        self._pos_of_id = None

    def _positions(self, ids: np.ndarray) -> np.ndarray:
        if self._pos_of_id is None:
            self._pos_of_id = {int(v): i for i, v in enumerate(self.ids)}
        try:
            return np.array([self._pos_of_id[int(v)] for v in np.atleast_1d(ids)],
                            dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"unknown id {exc.args[0]}") from None

    def reconstruct_batch(self, ids: np.ndarray) -> np.ndarray:
        return self.vectors[self._positions(ids)].copy()

    def remove_ids(self, ids: np.ndarray) -> int:
        mask = np.isin(self.ids, np.asarray(ids, dtype=np.int64))
        removed = int(mask.sum())
        if removed:
            keep = ~mask
            self.vectors = self.vectors[keep]
            self.ids = self.ids[keep]
            self.norms = self.norms[keep]
            self.ntotal -= removed
            self._pos_of_id = None
        return removed

    def _search(self, q: np.ndarray, k: int) -> SearchResult:
        blas_ok = self.metric.kind in (MetricKind.L2, MetricKind.InnerProduct)
        if blas_ok and q.shape[0] >= config.blas_threshold:
            return flat_search_blas(self, q, k)
        return flat_search(self, q, k)

    def _range_search(self, q: np.ndarray, radius: float) -> RangeResult:
        return flat_range_search(self, q, radius)


def _finish(index: FlatIndex, pos_ids: np.ndarray, dist: np.ndarray, k: int
            ) -> SearchResult:
    if index.ntotal == 0:
        return SearchResult(pos_ids, dist, k)  # already all-sentinel rows
    ids = np.where(pos_ids >= 0, index.ids[np.maximum(pos_ids, 0)], -1)
    return SearchResult(ids, dist, k)


def flat_search(index: FlatIndex, q: np.ndarray, k: int) -> SearchResult:
    """Exact top-k via direct per-pair distance computation (any metric)."""
    q = as_vectors(q, index.d)
    nq = q.shape[0]
    all_ids = np.empty((nq, k), dtype=np.int64)
    all_dist = np.empty((nq, k), dtype=np.float32)
    for lo in range(0, nq, _QUERY_CHUNK):
        hi = min(lo + _QUERY_CHUNK, nq)
        dmat = pairwise_distances(q[lo:hi], index.vectors, index.metric)
        ids, vals = topk_rows(dmat, k, index.metric.descending)
        all_ids[lo:hi] = ids
        all_dist[lo:hi] = vals
    if nq == 0:
        all_ids = all_ids.reshape(0, k)
        all_dist = all_dist.reshape(0, k)
    return _finish(index, all_ids, all_dist, k)


def flat_search_blas(index: FlatIndex, q: np.ndarray, k: int) -> SearchResult:
    """Exact top-k via the norm decomposition ||q-x||^2 = ||q||^2+||x||^2-2<q,x>.

    Only L2 and inner product route through here; other metrics fall back to
    the direct path.
    """
    if index.metric.kind not in (MetricKind.L2, MetricKind.InnerProduct):
        return flat_search(index, q, k)
    q = as_vectors(q, index.d)
    nq = q.shape[0]
    all_ids = np.empty((nq, k), dtype=np.int64)
    all_dist = np.empty((nq, k), dtype=np.float32)
    for lo in range(0, nq, _QUERY_CHUNK):
        hi = min(lo + _QUERY_CHUNK, nq)
        ip = q[lo:hi] @ index.vectors.T
        if index.metric.kind is MetricKind.L2:
            qn = np.einsum("nd,nd->n", q[lo:hi], q[lo:hi])
            dmat = qn[:, None] + index.norms[None, :] - 2.0 * ip
            np.maximum(dmat, 0.0, out=dmat)  # cancellation can go slightly negative
        else:
            dmat = ip
        ids, vals = topk_rows(dmat, k, index.metric.descending)
        all_ids[lo:hi] = ids
        all_dist[lo:hi] = vals
    return _finish(index, all_ids, all_dist, k)


def flat_range_search(index: FlatIndex, q: np.ndarray, radius: float) -> RangeResult:
    """All stored ids within the radius (<= for distances, >= for IP)."""
    q = as_vectors(q, index.d)
    nq = q.shape[0]
    lims = np.zeros(nq + 1, dtype=np.int64)
    chunks_ids: list[np.ndarray] = []
    chunks_dist: list[np.ndarray] = []
    desc = index.metric.descending
    for lo in range(0, nq, _QUERY_CHUNK):
        hi = min(lo + _QUERY_CHUNK, nq)
        dmat = pairwise_distances(q[lo:hi], index.vectors, index.metric)
        for r in range(hi - lo):
            row = dmat[r]
            mask = row >= radius if desc else row <= radius
            pos = np.nonzero(mask)[0]
            vals = row[pos]
            order = np.lexsort((index.ids[pos], -vals if desc else vals))
            chunks_ids.append(index.ids[pos][order])
            chunks_dist.append(vals[order])
            lims[lo + r + 1] = len(pos)
    np.cumsum(lims, out=lims)
    ids = np.concatenate(chunks_ids) if chunks_ids else np.empty(0, np.int64)
    dist = np.concatenate(chunks_dist) if chunks_dist else np.empty(0, np.float32)
    return RangeResult(lims, ids, dist.astype(np.float32), radius)
