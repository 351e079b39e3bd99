"""Shared domain types, metrics, top-k selection and accuracy measures."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import _kernels


class MetricKind(Enum):
    """Supported distance/similarity kinds.

    InnerProduct is larger-is-better; every other kind is smaller-is-better.
    L2 is the squared Euclidean distance.
    """

    InnerProduct = "ip"
    L2 = "l2"
    L1 = "l1"
    Linf = "linf"
    Lp = "lp"
    Canberra = "canberra"
    BrayCurtis = "braycurtis"
    JensenShannon = "jensenshannon"
    Jaccard = "jaccard"
    NaNEuclidean = "naneuclidean"


@dataclass(frozen=True)
class Metric:
    kind: MetricKind
    arg: float = 0.0  # the p of Lp, unused otherwise

    def __post_init__(self) -> None:
        if self.kind is MetricKind.Lp and not self.arg > 0:
            raise ValueError("Lp metric requires arg > 0")

    @property
    def descending(self) -> bool:
        """True when larger values are better (inner product)."""
        return self.kind is MetricKind.InnerProduct

    @property
    def code(self) -> int:
        return _kernels.METRIC_CODES[self.kind.value]


METRIC_IP = Metric(MetricKind.InnerProduct)
METRIC_L2 = Metric(MetricKind.L2)


def as_vectors(x: np.ndarray | Sequence, d: int | None = None) -> np.ndarray:
    """Coerce to the canonical vector-set layout: C-contiguous (n, d) float32."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d vector set, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise ValueError("vector dimension must be >= 1")
    if d is not None and arr.shape[1] != d:
        raise ValueError(f"dimension mismatch: got {arr.shape[1]}, index has {d}")
    return arr


@dataclass
class SearchResult:
    """Per-query top-k ids and distances, best first.

    Missing slots carry id -1 and the worst representable distance.
    """

    ids: np.ndarray  # (nq, k) int64
    distances: np.ndarray  # (nq, k) float32
    k: int

    @property
    def nq(self) -> int:
        return self.ids.shape[0]


@dataclass
class RangeResult:
    """Variable-length per-query results in CSR form.

    Query i owns entries lims[i]:lims[i+1]; each list is sorted best first.
    """

    lims: np.ndarray  # (nq + 1,) int64
    ids: np.ndarray  # int64
    distances: np.ndarray  # float32
    radius: float

    @property
    def nq(self) -> int:
        return len(self.lims) - 1

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.lims[i], self.lims[i + 1]
        return self.ids[lo:hi], self.distances[lo:hi]


class Index:
    """Base contract for every index: train/add/search plus bookkeeping.

    Read operations are safe to call concurrently on a frozen index; any
    mutating call requires exclusive access.
    """

    def __init__(self, d: int, metric: Metric = METRIC_L2):
        if d < 1:
            raise ValueError("d must be >= 1")
        self.d = int(d)
        self.metric = metric
        self.ntotal = 0
        self.is_trained = True

    # subclasses override the private hooks, not the public entry points
    def train(self, x: np.ndarray) -> None:
        x = as_vectors(x, self.d)
        self._train(x)
        self.is_trained = True

    def add(self, x: np.ndarray) -> None:
        x = as_vectors(x, self.d)
        ids = np.arange(self.ntotal, self.ntotal + x.shape[0], dtype=np.int64)
        self.add_with_ids(x, ids)

    def add_with_ids(self, x: np.ndarray, ids: np.ndarray) -> None:
        if not self.is_trained:
            raise RuntimeError("index must be trained before adding vectors")
        x = as_vectors(x, self.d)
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape != (x.shape[0],):
            raise ValueError("ids must be a 1-d array matching the vector count")
        if np.any(ids < 0):
            raise ValueError("ids must be >= 0 (sign bit is reserved)")
        self._add(x, ids)
        self.ntotal += x.shape[0]

    def search(self, q: np.ndarray, k: int) -> SearchResult:
        if not self.is_trained:
            raise RuntimeError("index must be trained before searching")
        if k < 1:
            raise ValueError("k must be >= 1")
        return self._search(as_vectors(q, self.d), int(k))

    def range_search(self, q: np.ndarray, radius: float) -> RangeResult:
        if not self.is_trained:
            raise RuntimeError("index must be trained before searching")
        return self._range_search(as_vectors(q, self.d), float(radius))

    def remove_ids(self, ids: np.ndarray) -> int:
        raise NotImplementedError(f"{type(self).__name__} does not support removal")

    def reconstruct_batch(self, ids: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} does not support reconstruction")

    def _train(self, x: np.ndarray) -> None:
        pass

    def _add(self, x: np.ndarray, ids: np.ndarray) -> None:
        raise NotImplementedError

    def _search(self, q: np.ndarray, k: int) -> SearchResult:
        raise NotImplementedError

    def _range_search(self, q: np.ndarray, radius: float) -> RangeResult:
        raise NotImplementedError


def pairwise_distance(x, y, metric: Metric) -> float:
    """Distance between two vectors under the given metric (Table formulas,
    L2 being squared Euclidean)."""
    xa = np.ascontiguousarray(x, dtype=np.float32).ravel()
    ya = np.ascontiguousarray(y, dtype=np.float32).ravel()
    return float(_kernels.dist_single(xa, ya, metric.code, float(metric.arg)))


def pairwise_distances(q: np.ndarray, x: np.ndarray, metric: Metric) -> np.ndarray:
    """Full (nq, nx) distance matrix; the brute-force building block."""
    q = as_vectors(q)
    x = as_vectors(x, q.shape[1])
    return _kernels.pairwise(q, x, metric.code, float(metric.arg))


# --- top-k selection ---------------------------------------------------------

def _monotone_key(values: np.ndarray) -> np.ndarray:
    """Map float32 to uint32 preserving order (NaN sorts above +inf)."""
    bits = values.view(np.uint32)
    neg = bits >= 0x80000000
    return np.where(neg, ~bits, bits | np.uint32(0x80000000))


def _composite_keys(values: np.ndarray, ids: np.ndarray) -> np.ndarray:
    # 64-bit sort key: value bits above, id below => (value, id) lexicographic
    return (_monotone_key(values).astype(np.uint64) << np.uint64(32)) | ids.astype(np.uint64)


def topk_rows(distances: np.ndarray, k: int, descending: bool = False
              ) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise top-k of a (nq, n) matrix with deterministic tie-breaks.

    Equal values are ordered by smaller column index. Rows shorter than k are
    padded with id -1 and the worst representable value.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    distances = np.atleast_2d(distances)
    nq, n = distances.shape
    vals = np.ascontiguousarray(distances, dtype=np.float32)
    key_vals = -vals if descending else vals
    cols = np.arange(n, dtype=np.uint64)
    keys = (_monotone_key(key_vals).astype(np.uint64) << np.uint64(32)) | cols
    kk = min(k, n)
    if kk > 0:
        if kk < n:
            part = np.partition(keys, kk - 1, axis=1)[:, :kk]
        else:
            part = keys
        part = np.sort(part, axis=1)
        top_ids = (part & np.uint64(0xFFFFFFFF)).astype(np.int64)
        top_vals = np.take_along_axis(vals, top_ids, axis=1)
    else:
        top_ids = np.empty((nq, 0), dtype=np.int64)
        top_vals = np.empty((nq, 0), dtype=np.float32)
    if kk < k:
        pad = np.float32(-np.inf) if descending else np.float32(np.inf)
        top_ids = np.hstack([top_ids, np.full((nq, k - kk), -1, dtype=np.int64)])
        top_vals = np.hstack([top_vals, np.full((nq, k - kk), pad, dtype=np.float32)])
    return top_ids, top_vals


def topk_select(distances, k: int, descending: bool = False
                ) -> tuple[np.ndarray, np.ndarray]:
    """Top-k of a 1-d value sequence; ids are positions in the input."""
    arr = np.asarray(distances, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError("topk_select expects a 1-d sequence")
    ids, vals = topk_rows(arr[None, :], k, descending)
    return ids[0], vals[0]


class ReservoirSelector:
    """Unordered buffer of capacity > k, compacted to the k best on overflow.

    Produces exactly the same (value, id) ordering as topk_select over the
    same stream.
    """

    def __init__(self, k: int, capacity: int, descending: bool = False):
        if k < 1:
            raise ValueError("k must be >= 1")
        if capacity <= k:
            raise ValueError("reservoir capacity must exceed k")
        self.k = k
        self.capacity = capacity
        self.descending = descending
        self._ids: list[int] = []
        self._vals: list[float] = []
        self._threshold: tuple[float, int] | None = None  # kth-best (key, id) so far

    def _key(self, value: float) -> float:
        return -value if self.descending else value

    def push(self, id_: int, value: float) -> None:
        if self._threshold is not None and (self._key(value), id_) >= self._threshold:
            return
        self._ids.append(id_)
        self._vals.append(value)
        if len(self._ids) >= self.capacity:
            self._compact()

    def push_many(self, ids: Iterable[int], values: Iterable[float]) -> None:
        for i, v in zip(ids, values):
            self.push(int(i), float(v))

    def _compact(self) -> None:
        order = sorted(range(len(self._ids)),
                       key=lambda i: (self._key(self._vals[i]), self._ids[i]))
        keep = order[: self.k]
        self._ids = [self._ids[i] for i in keep]
        self._vals = [self._vals[i] for i in keep]
        self._threshold = (self._key(self._vals[-1]), self._ids[-1])

    def result(self) -> tuple[np.ndarray, np.ndarray]:
        order = sorted(range(len(self._ids)),
                       key=lambda i: (self._key(self._vals[i]), self._ids[i]))[: self.k]
        ids = np.full(self.k, -1, dtype=np.int64)
        pad = -np.inf if self.descending else np.inf
        vals = np.full(self.k, pad, dtype=np.float32)
        for slot, i in enumerate(order):
            ids[slot] = self._ids[i]
            vals[slot] = self._vals[i]
        return ids, vals


def reservoir_select(stream: Iterable[tuple[int, float]], k: int, capacity: int,
                     descending: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Select the k best (id, value) pairs of a stream via a reservoir buffer."""
    res = ReservoirSelector(k, capacity, descending)
    for id_, value in stream:
        res.push(int(id_), float(value))
    return res.result()


# --- accuracy metrics --------------------------------------------------------

def knn_recall(result: SearchResult, ground_truth: SearchResult,
               n: int, k: int) -> float:
    """n-recall@k: mean fraction of the n true neighbors found in the top k."""
    if n > k:
        raise ValueError("n-recall@k requires n <= k")
    if ground_truth.ids.shape[1] < n:
        raise ValueError("ground truth has fewer than n entries per query")
    got = result.ids[:, :k]
    want = ground_truth.ids[:, :n]
    hits = 0
    for row_got, row_want in zip(got, want):
        keep = row_want[row_want >= 0]
        hits += np.isin(keep, row_got[row_got >= 0]).sum()
    return hits / (result.nq * n)


def range_search_map(results: Sequence[RangeResult], ground_truth: RangeResult) -> float:
    """Area under the precision/recall curve of swept-threshold range search.

    Precision and recall are pooled over queries ((query, id) pairs are the
    retrieval units). The curve is integrated with trapezoidal interpolation,
    extended flat from recall 0 to the first measured point.
    """
    nq = ground_truth.nq
    gt_sets = [set(ground_truth.row(i)[0].tolist()) for i in range(nq)]
    total_relevant = sum(len(s) for s in gt_sets)
    if total_relevant == 0:
        raise ValueError("ground truth is empty for every query")
    points = []
    for res in results:
        if res.nq != nq:
            raise ValueError("result/ground-truth query count mismatch")
        retrieved = inter = 0
        for i in range(nq):
            ids = res.row(i)[0]
            retrieved += len(ids)
            inter += sum(1 for j in ids.tolist() if j in gt_sets[i])
        precision = inter / retrieved if retrieved else 1.0
        recall = inter / total_relevant
        points.append((recall, precision))
    points.sort()
    # upper envelope at duplicate recalls
    dedup: dict[float, float] = {}
    for r, p in points:
        dedup[r] = max(p, dedup.get(r, 0.0))
    curve = sorted(dedup.items())
    area = 0.0
    prev_r, prev_p = 0.0, curve[0][1]
    for r, p in curve:
        area += (r - prev_r) * (prev_p + p) / 2.0
        prev_r, prev_p = r, p
    return area


def refine_search(fast: Index, exact: Index, q: np.ndarray, k: int,
                  shortlist: int) -> SearchResult:
    """Two-stage search: shortlist from the fast index, re-ranked with exact
    distances reconstructed from the second index."""
    if shortlist < k:
        raise ValueError("shortlist must be >= k")
    q = as_vectors(q, fast.d)
    metric = fast.metric
    coarse = fast.search(q, shortlist)
    nq = q.shape[0]
    out_ids = np.full((nq, k), -1, dtype=np.int64)
    pad = -np.inf if metric.descending else np.inf
    out_dist = np.full((nq, k), pad, dtype=np.float32)
    for i in range(nq):
        cand = coarse.ids[i]
        cand = cand[cand >= 0]
        if len(cand) == 0:
            continue
        vecs = exact.reconstruct_batch(cand)
        dists = pairwise_distances(q[i], vecs, metric)[0]
        order = sorted(range(len(cand)),
                       key=lambda j: (-dists[j] if metric.descending else dists[j],
                                      cand[j]))[:k]
        for slot, j in enumerate(order):
            out_ids[i, slot] = cand[j]
            out_dist[i, slot] = dists[j]
    return SearchResult(out_ids, out_dist, k)
