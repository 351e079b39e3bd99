"""HNSW graph index: hierarchical build, best-first beam search."""

from __future__ import annotations

import heapq
import math

import numpy as np

from .core import (Index, Metric, METRIC_L2, MetricKind, RangeResult,
                   SearchResult, as_vectors)
from .flat import FlatIndex


class HnswIndex(Index):
    """Hierarchical navigable small-world graph over raw vectors.

    Levels are sampled as floor(-ln(U) * m_L) with m_L = 1/ln(M); nodes keep
    at most M edges per upper level and 2M at the base level. Vectors can be
    added incrementally; removal is not supported (the graph cannot be
    repaired cheaply).
    """

    def __init__(self, d: int, m: int = 32, metric: Metric = METRIC_L2,
                 ef_construction: int = 40, ef_search: int = 16, seed: int = 0):
        if metric.kind not in (MetricKind.L2, MetricKind.InnerProduct):
            raise ValueError("graph index supports only L2 and inner product")
        super().__init__(d, metric)
        if m < 2:
            raise ValueError("M must be >= 2")
        self.m = m
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.seed = seed
        self.level_mult = 1.0 / math.log(m)
        self.storage = FlatIndex(d, metric)
        self.levels: list[int] = []
        # links[node][level] -> int64 array of neighbors
        self.links: list[list[np.ndarray]] = []
        self.entry_point = -1
        self.max_level = -1
        self._rng = np.random.default_rng(seed)
        self.last_ndis = 0  # distance evaluations in the most recent call

    # internal distances are smaller-is-better; IP is negated
    def _dists(self, qvec: np.ndarray, nodes: np.ndarray) -> np.ndarray:
        vecs = self.storage.vectors[nodes]
        diff = vecs - qvec
        out = np.einsum("nd,nd->n", diff, diff) if \
            self.metric.kind is MetricKind.L2 else -(vecs @ qvec)
        self.last_ndis += len(nodes)
        return out

    def _capacity(self, level: int) -> int:
        return 2 * self.m if level == 0 else self.m

    def _add(self, x: np.ndarray, ids: np.ndarray) -> None:
        if not np.array_equal(ids, np.arange(self.ntotal, self.ntotal + len(ids))):
            raise ValueError("graph index uses sequential ids; wrap it in an "
                             "id-mapping layer for arbitrary ids")
        self.storage.add(x)
        for row in range(x.shape[0]):
            self._insert(self.ntotal + row, x[row])

    def _insert(self, node: int, vec: np.ndarray) -> None:
        level = int(-math.log(max(self._rng.random(), 1e-300)) * self.level_mult)
        self.levels.append(level)
        self.links.append([np.empty(0, dtype=np.int64) for _ in range(level + 1)])
        if self.entry_point < 0:
            self.entry_point = node
            self.max_level = level
            return
        ep = self.entry_point
        ep_dist = float(self._dists(vec, np.array([ep]))[0])
        for lv in range(self.max_level, level, -1):
            ep, ep_dist = self._greedy_step(vec, ep, ep_dist, lv)
        eps = [(ep_dist, ep)]
        for lv in range(min(level, self.max_level), -1, -1):
            cands = self._search_layer(vec, eps, self.ef_construction, lv)
            chosen = self._select_neighbors(cands, self.m)
            self.links[node][lv] = np.array([c[1] for c in chosen], dtype=np.int64)
            for dist, nb in chosen:
                self._link_back(nb, node, dist, lv)
            eps = cands
        if level > self.max_level:
            self.max_level = level
            self.entry_point = node

    def _greedy_step(self, vec, ep, ep_dist, level):
        while True:
            nbrs = self.links[ep][level] if level < len(self.links[ep]) else None
            if nbrs is None or len(nbrs) == 0:
                return ep, ep_dist
            d = self._dists(vec, nbrs)
            best = int(d.argmin())
            if d[best] < ep_dist:
                ep, ep_dist = int(nbrs[best]), float(d[best])
            else:
                return ep, ep_dist

    def _search_layer(self, vec: np.ndarray, entry: list[tuple[float, int]],
                      ef: int, level: int) -> list[tuple[float, int]]:
        """Best-first expansion keeping the ef closest visited nodes.

        Returns (dist, node) pairs sorted best first.
        """
        visited = set(n for _, n in entry)
        candidates = list(entry)  # min-heap on (dist, node)
        heapq.heapify(candidates)
        results = [(-d, n) for d, n in entry]  # max-heap via negation
        heapq.heapify(results)
        while len(results) > ef:
            heapq.heappop(results)
        while candidates:
            dist, node = heapq.heappop(candidates)
            if results and dist > -results[0][0] and len(results) >= ef:
                break
            nbrs = self.links[node][level]
            fresh = [int(nb) for nb in nbrs if nb not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            dists = self._dists(vec, np.array(fresh, dtype=np.int64))
            for nd, nb in zip(dists, fresh):
                nd = float(nd)
                if len(results) < ef or nd < -results[0][0]:
                    heapq.heappush(candidates, (nd, nb))
                    heapq.heappush(results, (-nd, nb))
                    if len(results) > ef:
                        heapq.heappop(results)
        out = sorted(((-nd, nb) for nd, nb in results), key=lambda t: (t[0], t[1]))
        return out

    def _cross_dists(self, ids: np.ndarray) -> np.ndarray:
        """Pairwise internal distances among a small candidate set."""
        vecs = self.storage.vectors[ids]
        ip = vecs @ vecs.T
        if self.metric.kind is MetricKind.L2:
            sq = np.einsum("nd,nd->n", vecs, vecs)
            out = np.maximum(sq[:, None] + sq[None, :] - 2.0 * ip, 0.0)
        else:
            out = -ip
        self.last_ndis += len(ids) * (len(ids) - 1) // 2
        return out

    def _select_neighbors(self, candidates: list[tuple[float, int]],
                          m: int) -> list[tuple[float, int]]:
        """Distance-based pruning: keep a candidate only if it is closer to the
        new node than to every neighbor already kept; backfill spare capacity
        with the nearest pruned candidates (keeps the graph well connected)."""
        if len(candidates) <= 1:
            return list(candidates)
        ids = np.array([c[1] for c in candidates], dtype=np.int64)
        cross = self._cross_dists(ids).tolist()
        kept: list[int] = []
        pruned: list[int] = []
        for i, (dist, _) in enumerate(candidates):
            if len(kept) >= m:
                break
            row = cross[i]
            if all(dist < row[j] for j in kept):
                kept.append(i)
            else:
                pruned.append(i)
        for i in pruned:
            if len(kept) >= m:
                break
            kept.append(i)
        out = [candidates[i] for i in kept]
        out.sort(key=lambda t: (t[0], t[1]))
        return out

    def _link_back(self, node: int, new_nb: int, dist: float, level: int) -> None:
        links = self.links[node][level]
        cap = self._capacity(level)
        if len(links) < cap:
            self.links[node][level] = np.append(links, new_nb)
            return
        # over capacity: re-select among existing plus the new edge
        cand_ids = np.append(links, new_nb)
        cand_d = self._dists(self.storage.vectors[node], cand_ids)
        cands = sorted(zip(cand_d.tolist(), cand_ids.tolist()))
        chosen = self._select_neighbors(cands, cap)
        self.links[node][level] = np.array([c[1] for c in chosen], dtype=np.int64)

    def _search(self, q: np.ndarray, k: int) -> SearchResult:
        return hnsw_search(self, q, k, max(self.ef_search, k))[0]

    def _range_search(self, q: np.ndarray, radius: float) -> RangeResult:
        raise NotImplementedError("graph index does not implement range search")

    def remove_ids(self, ids: np.ndarray) -> int:
        raise NotImplementedError("HNSW does not support removal")

    def reconstruct_batch(self, ids: np.ndarray) -> np.ndarray:
        return self.storage.reconstruct_batch(ids)

    def base_layer_components(self) -> int:
        """Connected components of the undirected base-level graph (BFS)."""
        n = self.ntotal
        seen = np.zeros(n, dtype=bool)
        undirected: list[set[int]] = [set() for _ in range(n)]
        for node in range(n):
            for nb in self.links[node][0]:
                undirected[node].add(int(nb))
                undirected[int(nb)].add(node)
        components = 0
        for start in range(n):
            if seen[start]:
                continue
            components += 1
            stack = [start]
            seen[start] = True
            while stack:
                cur = stack.pop()
                for nb in undirected[cur]:
                    if not seen[nb]:
                        seen[nb] = True
                        stack.append(nb)
        return components

    def max_degree(self) -> int:
        return max((len(lv) for links in self.links for lv in links), default=0)


def hnsw_search(index: HnswIndex, q: np.ndarray, k: int,
                ef_search: int | None = None) -> tuple[SearchResult, int]:
    """Greedy descent through upper levels, beam search at the base level.

    Returns the results plus the number of distance evaluations performed.
    """
    ef = index.ef_search if ef_search is None else ef_search
    if ef < k:
        raise ValueError("efSearch must be >= k")
    q = as_vectors(q, index.d)
    nq = q.shape[0]
    desc = index.metric.descending
    out_ids = np.full((nq, k), -1, dtype=np.int64)
    out_dist = np.full((nq, k), -np.inf if desc else np.inf, dtype=np.float32)
    index.last_ndis = 0
    if index.ntotal == 0:
        return SearchResult(out_ids, out_dist, k), 0
    for i in range(nq):
        vec = q[i]
        ep = index.entry_point
        ep_dist = float(index._dists(vec, np.array([ep]))[0])
        for lv in range(index.max_level, 0, -1):
            ep, ep_dist = index._greedy_step(vec, ep, ep_dist, lv)
        found = index._search_layer(vec, [(ep_dist, ep)], ef, 0)
        for slot, (dist, node) in enumerate(found[:k]):
            out_ids[i, slot] = node
            out_dist[i, slot] = -dist if desc else dist
    return SearchResult(out_ids, out_dist, k), index.last_ndis


def hnsw_add(index: HnswIndex, x: np.ndarray,
             ids: np.ndarray | None = None) -> None:
    """Insert vectors one by one (node numbering is sequential)."""
    if ids is None:
        index.add(x)
    else:
        index.add_with_ids(x, np.asarray(ids, dtype=np.int64))
