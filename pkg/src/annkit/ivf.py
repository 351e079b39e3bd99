"""Inverted-file index: coarse quantization, residual codes, nprobe search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import _kernels
from .core import (Index, Metric, METRIC_L2, MetricKind, RangeResult,
                   ReservoirSelector, SearchResult, as_vectors,
                   pairwise_distances)
from .flat import FlatIndex
from .quantize import AdditiveCodec, Codec, ProductCodec, lloyd


def ivf_cost_model(k_ivf: int, p_ivf: int, n: int) -> float:
    """Expected distance computations with balanced lists and an exhaustive
    coarse quantizer: K + P*N/K, minimized at K = sqrt(P*N)."""
    if k_ivf <= 0 or p_ivf <= 0 or n <= 0:
        raise ValueError("all cost-model arguments must be positive")
    return k_ivf + p_ivf * n / k_ivf


def imbalance_factor(sizes: Sequence[int]) -> float:
    """nlist * sum(s^2) / (sum s)^2; equals 1 iff all lists are equal."""
    sizes = np.asarray(sizes, dtype=np.float64)
    total = sizes.sum()
    if total <= 0:
        raise ValueError("imbalance factor undefined for an all-empty index")
    return float(len(sizes) * (sizes ** 2).sum() / total ** 2)


class InvertedListStorage:
    """Storage contract for inverted lists; external stores can subclass.

    Codes are opaque fixed-size byte rows. Entry order within a list is
    unspecified; removal may reorder entries (swap-with-last).
    """

    def __init__(self, nlist: int, code_size: int):
        self.nlist = nlist
        self.code_size = code_size

    def list_size(self, list_no: int) -> int:
        raise NotImplementedError

    def get_ids(self, list_no: int) -> np.ndarray:
        raise NotImplementedError

    def get_codes(self, list_no: int) -> np.ndarray:
        raise NotImplementedError

    def append(self, list_no: int, ids: np.ndarray, codes: np.ndarray) -> int:
        """Returns the offset of the first appended entry."""
        raise NotImplementedError

    def remove_position(self, list_no: int, offset: int) -> int | None:
        """Swap-with-last removal; returns the id that moved into ``offset``
        (None when the tail itself was removed)."""
        raise NotImplementedError

    def replace(self, list_no: int, offset: int, id_: int, code: np.ndarray) -> None:
        raise NotImplementedError

    def iterate(self, list_no: int) -> Iterator[tuple[int, np.ndarray]]:
        """Yield (id, code row) pairs; the contract external stores implement."""
        ids = self.get_ids(list_no)
        codes = self.get_codes(list_no)
        for i in range(len(ids)):
            yield int(ids[i]), codes[i]

    def sizes(self) -> np.ndarray:
        return np.array([self.list_size(l) for l in range(self.nlist)], dtype=np.int64)


class ArrayInvertedLists(InvertedListStorage):
    """Default in-memory storage: one (ids, codes) array pair per list."""

    def __init__(self, nlist: int, code_size: int):
        super().__init__(nlist, code_size)
        self._ids = [np.empty(0, dtype=np.int64) for _ in range(nlist)]
        self._codes = [np.empty((0, code_size), dtype=np.uint8) for _ in range(nlist)]

    def list_size(self, list_no: int) -> int:
        return len(self._ids[list_no])

    def get_ids(self, list_no: int) -> np.ndarray:
        return self._ids[list_no]

    def get_codes(self, list_no: int) -> np.ndarray:
        return self._codes[list_no]

    def append(self, list_no: int, ids: np.ndarray, codes: np.ndarray) -> int:
        offset = len(self._ids[list_no])
        self._ids[list_no] = np.concatenate([self._ids[list_no], ids])
        self._codes[list_no] = np.vstack([self._codes[list_no], codes])
        return offset

    def remove_position(self, list_no: int, offset: int) -> int | None:
        ids, codes = self._ids[list_no], self._codes[list_no]
        last = len(ids) - 1
        moved = None
        if offset != last:
            ids[offset] = ids[last]
            codes[offset] = codes[last]
            moved = int(ids[offset])
        self._ids[list_no] = ids[:last]
        self._codes[list_no] = codes[:last]
        return moved

    def replace(self, list_no: int, offset: int, id_: int, code: np.ndarray) -> None:
        self._ids[list_no][offset] = id_
        self._codes[list_no][offset] = code


@dataclass
class IvfStats:
    """Search-cost counters for one search call (summed over the batch)."""

    ndis_scan: int = 0
    ndis_coarse: int = 0
    nlist_visited: int = 0
    imbalance: float = 0.0

    @property
    def ndis(self) -> int:
        """Visited list lengths plus coarse-quantizer distance count."""
        return self.ndis_scan + self.ndis_coarse


class IvfIndex(Index):
    """Coarse quantizer routing vectors into inverted lists of codes.

    ``codec=None`` stores raw float32 vectors (IVF-Flat). ``by_residual``
    encodes x - centroid(x), which is what the compressed variants default to.
    """

    def __init__(self, d: int, nlist: int, codec: Codec | None = None,
                 metric: Metric = METRIC_L2, by_residual: bool = True,
                 nprobe: int = 1, spherical: bool = False,
                 direct_map: str = "none", coarse: Index | None = None,
                 kmeans_niter: int = 25, seed: int = 0):
        super().__init__(d, metric)
        if metric.kind not in (MetricKind.L2, MetricKind.InnerProduct) and codec is not None:
            raise ValueError("compressed IVF supports only L2 and inner product")
        if direct_map not in ("none", "array", "hashtable"):
            raise ValueError("direct_map must be none, array or hashtable")
        self.nlist = nlist
        self.codec = codec
        self.by_residual = by_residual and codec is not None
        self.nprobe = nprobe
        self.spherical = spherical
        self.kmeans_niter = kmeans_niter
        self.seed = seed
        self.coarse = coarse  # built at train time when not supplied
        self._centroids = np.empty((0, d), dtype=np.float32)
        self.lists: InvertedListStorage | None = None
        self.direct_map_mode = direct_map
        self._dmap: dict[int, tuple[int, int]] | None = (
            {} if direct_map != "none" else None)
        self.is_trained = False

    # -- layout helpers --

    @property
    def code_size(self) -> int:
        return self.codec.code_size if self.codec is not None else 4 * self.d

    def _encode(self, x: np.ndarray, assign: np.ndarray) -> np.ndarray:
        if self.codec is None:
            return np.ascontiguousarray(x, dtype=np.float32).view(np.uint8)
        if self.by_residual:
            x = x - self.centroids[assign]
        return self.codec.compute_codes(x)

    def _decode(self, codes: np.ndarray, list_no: int) -> np.ndarray:
        if self.codec is None:
            return np.ascontiguousarray(codes).view(np.float32).reshape(-1, self.d)
        out = self.codec.decode(codes)
        if self.by_residual:
            out = out + self.centroids[list_no]
        return out

    @property
    def centroids(self) -> np.ndarray:
        return self._centroids

    # -- training --

    def _train(self, x: np.ndarray) -> None:
        if x.shape[0] < self.nlist:
            raise ValueError(f"need at least nlist={self.nlist} training vectors")
        cents, _ = lloyd(x, self.nlist, self.kmeans_niter, self.spherical, self.seed)
        cents32 = cents.astype(np.float32)
        if self.coarse is None:
            # spherical clustering routes by inner product; the default is L2
            # assignment regardless of the index metric
            probe_metric = Metric(MetricKind.InnerProduct) if self.spherical else METRIC_L2
            self.coarse = FlatIndex(self.d, probe_metric)
        self.coarse.add(cents32)
        self._centroids = cents32
        if self.codec is not None:
            train_x = x
            if self.by_residual:
                assign = self._assign_vectors(x)
                train_x = x - self.centroids[assign]
            self.codec.train(train_x)
        self.lists = ArrayInvertedLists(self.nlist, self.code_size)

    def _assign_vectors(self, x: np.ndarray) -> np.ndarray:
        return self.coarse.search(x, 1).ids[:, 0]

    # -- maintenance --

    def _add(self, x: np.ndarray, ids: np.ndarray) -> None:
        if self.lists is None:
            raise RuntimeError("index must be trained before adding vectors")
        if self._dmap is not None:
            dup = [int(i) for i in ids if int(i) in self._dmap]
            if dup:
                raise ValueError(f"duplicate ids with direct_map enabled: {dup[:5]}")
        assign = self._assign_vectors(x)
        codes = self._encode(x, assign)
        for list_no in np.unique(assign):
            sel = np.nonzero(assign == list_no)[0]
            offset = self.lists.append(int(list_no), ids[sel], codes[sel])
            if self._dmap is not None:
                for j, row in enumerate(sel):
                    self._dmap[int(ids[row])] = (int(list_no), offset + j)

    def _locate(self, id_: int) -> tuple[int, int]:
        if self._dmap is not None:
            if id_ not in self._dmap:
                raise KeyError(f"unknown id {id_}")
            return self._dmap[id_]
        for list_no in range(self.nlist):
            pos = np.nonzero(self.lists.get_ids(list_no) == id_)[0]
            if len(pos):
                return list_no, int(pos[0])
        raise KeyError(f"unknown id {id_}")

    def remove_ids(self, ids: np.ndarray) -> int:
        removed = 0
        for raw in np.asarray(ids, dtype=np.int64):
            id_ = int(raw)
            try:
                list_no, offset = self._locate(id_)
            except KeyError:
                continue
            moved = self.lists.remove_position(list_no, offset)
            if self._dmap is not None:
                del self._dmap[id_]
                if moved is not None:
                    self._dmap[moved] = (list_no, offset)
            removed += 1
        self.ntotal -= removed
        return removed

    def update_vectors(self, ids: np.ndarray, x: np.ndarray) -> int:
        """Re-encode the vectors for the given ids (they may change lists)."""
        ids = np.asarray(ids, dtype=np.int64)
        x = as_vectors(x, self.d)
        found = self.remove_ids(ids)
        if found != len(ids):
            raise KeyError("update_vectors: some ids are not in the index")
        self.add_with_ids(x, ids)
        return found

    def reconstruct_batch(self, ids: np.ndarray) -> np.ndarray:
        out = np.empty((len(np.atleast_1d(ids)), self.d), dtype=np.float32)
        for row, raw in enumerate(np.atleast_1d(ids)):
            list_no, offset = self._locate(int(raw))
            code = self.lists.get_codes(list_no)[offset:offset + 1]
            out[row] = self._decode(code, list_no)[0]
        return out

    # -- search --

    def _list_distances(self, q: np.ndarray, list_no: int) -> tuple[np.ndarray, np.ndarray]:
        """Distances from one query to every entry of one list."""
        ids = self.lists.get_ids(list_no)
        if len(ids) == 0:
            return ids, np.empty(0, dtype=np.float32)
        codes = self.lists.get_codes(list_no)
        if self.codec is None:
            vecs = codes.view(np.float32).reshape(-1, self.d)
            return ids, pairwise_distances(q[None, :], vecs, self.metric)[0]
        return ids, self._compressed_scan(q, list_no, codes)

    def _compressed_scan(self, q: np.ndarray, list_no: int, codes: np.ndarray
                         ) -> np.ndarray:
        centroid = self.centroids[list_no] if self.by_residual else None
        qeff = (q - centroid) if self.by_residual else q
        codec = self.codec
        is_ip = self.metric.kind is MetricKind.InnerProduct
        if isinstance(codec, ProductCodec):
            body = np.ascontiguousarray(codes)
            if is_ip:
                lut = codec.ip_lookup_tables(qeff)
                dist = _kernels.lut_sum_packed(body, codec.m, codec.nbits, lut)
                if self.by_residual:
                    dist = dist + np.float32(q @ centroid)
            else:
                lut = codec.l2_lookup_tables(qeff)
                dist = _kernels.lut_sum_packed(body, codec.m, codec.nbits, lut)
            return dist
        if isinstance(codec, AdditiveCodec) and codec.norm_mode != "none":
            body = np.ascontiguousarray(codes[:, : codec.code_size - codec.norm_bytes])
            lut = codec.ip_lookup_tables(qeff)
            ip = _kernels.lut_sum_packed(body, codec.m, codec.nbits, lut)
            if is_ip:
                dist = ip + (np.float32(q @ centroid) if self.by_residual else 0.0)
                return np.asarray(dist, dtype=np.float32)
            norms = codec.stored_norms(codes).astype(np.float32)
            qn = np.float32(qeff @ qeff)
            return np.maximum(qn + norms - 2.0 * ip, 0.0).astype(np.float32)
        # generic path: decode the list and compute exact distances
        vecs = self._decode(codes, list_no)
        return pairwise_distances(q[None, :], vecs, self.metric)[0]

    def probe_lists(self, q: np.ndarray, nprobe: int) -> np.ndarray:
        """The nprobe coarse cells to visit, best first, per query row."""
        return self.coarse.search(q, nprobe).ids

    def _search(self, q: np.ndarray, k: int) -> SearchResult:
        return ivf_search(self, q, k, self.nprobe)[0]

    def _range_search(self, q: np.ndarray, radius: float) -> RangeResult:
        nprobe = min(self.nprobe, self.nlist)
        probes = self.probe_lists(q, nprobe)
        desc = self.metric.descending
        lims = np.zeros(q.shape[0] + 1, dtype=np.int64)
        all_ids, all_dist = [], []
        for i in range(q.shape[0]):
            cand_ids, cand_dist = self._gather(q[i], probes[i])
            mask = cand_dist >= radius if desc else cand_dist <= radius
            sel_ids, sel_dist = cand_ids[mask], cand_dist[mask]
            order = np.lexsort((sel_ids, -sel_dist if desc else sel_dist))
            all_ids.append(sel_ids[order])
            all_dist.append(sel_dist[order])
            lims[i + 1] = lims[i] + len(order)
        return RangeResult(
            lims,
            np.concatenate(all_ids) if all_ids else np.empty(0, np.int64),
            np.concatenate(all_dist).astype(np.float32) if all_dist else np.empty(0, np.float32),
            radius)

    def _gather(self, qrow: np.ndarray, probe_row: np.ndarray,
                selector: Callable[[np.ndarray], np.ndarray] | None = None
                ) -> tuple[np.ndarray, np.ndarray]:
        ids_parts, dist_parts = [], []
        for list_no in probe_row:
            if list_no < 0:
                continue
            ids, dist = self._list_distances(qrow, int(list_no))
            if len(ids) == 0:
                continue
            if selector is not None:
                keep = selector(ids)
                ids, dist = ids[keep], dist[keep]
            ids_parts.append(ids)
            dist_parts.append(dist)
        if not ids_parts:
            return np.empty(0, np.int64), np.empty(0, np.float32)
        return np.concatenate(ids_parts), np.concatenate(dist_parts)


def _merge_topk(cand_ids: np.ndarray, cand_dist: np.ndarray, k: int,
                descending: bool) -> tuple[np.ndarray, np.ndarray]:
    ids = np.full(k, -1, dtype=np.int64)
    dist = np.full(k, -np.inf if descending else np.inf, dtype=np.float32)
    if len(cand_ids):
        order = np.lexsort((cand_ids, -cand_dist if descending else cand_dist))[:k]
        ids[: len(order)] = cand_ids[order]
        dist[: len(order)] = cand_dist[order]
    return ids, dist


def ivf_search(index: IvfIndex, q: np.ndarray, k: int, nprobe: int | None = None,
               selector: Callable[[np.ndarray], np.ndarray] | None = None
               ) -> tuple[SearchResult, IvfStats]:
    """Scan the nprobe nearest cells per query; returns results and cost stats.

    ``selector`` is an optional vectorized id predicate (see annkit.filter);
    entries failing it are skipped before distance computation.
    """
    if not index.is_trained:
        raise RuntimeError("index must be trained before searching")
    nprobe = index.nprobe if nprobe is None else nprobe
    if not 1 <= nprobe <= index.nlist:
        raise ValueError(f"nprobe must be in 1..{index.nlist}")
    q = as_vectors(q, index.d)
    probes = index.probe_lists(q, nprobe)
    stats = IvfStats()
    sizes = index.lists.sizes()
    if sizes.sum() > 0:
        stats.imbalance = imbalance_factor(sizes)
    coarse_cost = index.nlist if isinstance(index.coarse, FlatIndex) else 0
    out_ids = np.empty((q.shape[0], k), dtype=np.int64)
    out_dist = np.empty((q.shape[0], k), dtype=np.float32)
    for i in range(q.shape[0]):
        cand_ids, cand_dist = index._gather(q[i], probes[i], selector)
        row_ids = probes[i]
        stats.nlist_visited += int((row_ids >= 0).sum())
        stats.ndis_scan += int(sizes[row_ids[row_ids >= 0]].sum())
        stats.ndis_coarse += coarse_cost
        out_ids[i], out_dist[i] = _merge_topk(cand_ids, cand_dist, k,
                                              index.metric.descending)
    return SearchResult(out_ids, out_dist, k), stats


def ivf_train(x: np.ndarray, nlist: int, codec: Codec | None = None,
              metric: Metric = METRIC_L2, spherical: bool = False,
              by_residual: bool = True, **kw) -> IvfIndex:
    """Train a fresh IVF index on x (coarse centroids plus codec)."""
    x = as_vectors(x)
    index = IvfIndex(x.shape[1], nlist, codec, metric, by_residual,
                     spherical=spherical, **kw)
    index.train(x)
    return index


def big_batch_search(index: IvfIndex, q: np.ndarray, k: int,
                     chunk_bytes: int, nprobe: int | None = None
                     ) -> tuple[SearchResult, int]:
    """List-at-a-time search: quantize all queries first, then stream over the
    inverted lists in chunks of at most ``chunk_bytes`` of codes, updating
    per-query reservoirs. Returns (results, peak resident chunk bytes).
    """
    if not index.is_trained:
        raise RuntimeError("index must be trained before searching")
    nprobe = index.nprobe if nprobe is None else nprobe
    q = as_vectors(q, index.d)
    nq = q.shape[0]
    probes = index.probe_lists(q, nprobe)
    row_bytes = index.code_size + 8  # code plus id
    list_bytes = index.lists.sizes() * row_bytes
    if list_bytes.max(initial=0) > chunk_bytes:
        raise ValueError("chunk budget smaller than the largest single list")
    queries_of_list: dict[int, list[int]] = {}
    for i in range(nq):
        for list_no in probes[i]:
            if list_no >= 0:
                queries_of_list.setdefault(int(list_no), []).append(i)
    reservoirs = [ReservoirSelector(k, max(2 * k, k + 1), index.metric.descending)
                  for _ in range(nq)]
    peak = 0
    chunk: list[int] = []
    chunk_size = 0

    def flush() -> None:
        nonlocal peak, chunk, chunk_size
        peak = max(peak, chunk_size)
        for list_no in chunk:
            for qi in queries_of_list.get(list_no, ()):
                ids, dist = index._list_distances(q[qi], list_no)
                reservoirs[qi].push_many(ids, dist)
        chunk, chunk_size = [], 0

    for list_no in sorted(queries_of_list):
        size = int(list_bytes[list_no])
        if chunk and chunk_size + size > chunk_bytes:
            flush()
        chunk.append(list_no)
        chunk_size += size
    if chunk:
        flush()
    out_ids = np.empty((nq, k), dtype=np.int64)
    out_dist = np.empty((nq, k), dtype=np.float32)
    for i, res in enumerate(reservoirs):
        out_ids[i], out_dist[i] = res.result()
    return SearchResult(out_ids, out_dist, k), peak
