"""Predicate-filtered search: id selectors, word-signature prefilter, planner.

Word filtering follows the bag-of-words setting: every item carries a few
vocabulary terms, a query carries 1 or 2, and only items containing all query
terms match. Signatures packed into the unused high bits of the 63-bit ids
give a cheap in-register prefilter; the exact postings check runs only when
the prefilter cannot rule an item out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import SearchResult, as_vectors, pairwise_distances
from .flat import FlatIndex, flat_search
from .ivf import IvfIndex, ivf_search

DEFAULT_PLAN_THRESHOLD = 3e-4


# --- id selectors --------------------------------------------------------------

class IdSelector:
    """Vectorized id predicate; must be pure and stable during one search."""

    def __call__(self, ids: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdSelectorAll(IdSelector):
    def __call__(self, ids: np.ndarray) -> np.ndarray:
        return np.ones(len(ids), dtype=bool)


class IdSelectorRange(IdSelector):
    """Accepts ids in [lo, hi)."""

    def __init__(self, lo: int, hi: int):
        self.lo, self.hi = lo, hi

    def __call__(self, ids: np.ndarray) -> np.ndarray:
        return (ids >= self.lo) & (ids < self.hi)


class IdSelectorArray(IdSelector):
    """Accepts an explicit id set."""

    def __init__(self, ids: Sequence[int]):
        self.sorted_ids = np.unique(np.asarray(ids, dtype=np.int64))

    def __call__(self, ids: np.ndarray) -> np.ndarray:
        if len(self.sorted_ids) == 0:
            return np.zeros(len(ids), dtype=bool)
        pos = np.minimum(np.searchsorted(self.sorted_ids, ids),
                         len(self.sorted_ids) - 1)
        return self.sorted_ids[pos] == ids


class IdSelectorBitmap(IdSelector):
    """Accepts ids whose bit is set in a dense boolean bitmap."""

    def __init__(self, bitmap: np.ndarray):
        self.bitmap = np.asarray(bitmap, dtype=bool)

    def __call__(self, ids: np.ndarray) -> np.ndarray:
        ok = ids < len(self.bitmap)
        out = np.zeros(len(ids), dtype=bool)
        out[ok] = self.bitmap[ids[ok]]
        return out


class IdSelectorFunction(IdSelector):
    """Wraps a user callback taking an id array and returning a mask."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def __call__(self, ids: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(ids), dtype=bool)


# --- word signatures -------------------------------------------------------------

class WordSignatureTable:
    """Per-word random bit signatures packed above the id bits.

    With N items, ceil(log2 N) low bits hold the id and the remaining
    63 - ceil(log2 N) high bits hold the OR of the item's word signatures.
    Signature bits are i.i.d. Bernoulli(p) per word, deterministic per seed.
    """

    def __init__(self, vocab_size: int, n_max: int, p: float = 0.1, seed: int = 0):
        if vocab_size < 1:
            raise ValueError("vocabulary must be non-empty")
        self.vocab_size = vocab_size
        self.id_bits = max(1, math.ceil(math.log2(max(n_max, 2))))
        self.sig_bits = 63 - self.id_bits
        if self.sig_bits <= 0:
            raise ValueError("no free bits left for signatures")
        self.p = p
        self.seed = seed
        rng = np.random.default_rng(seed)
        draws = rng.random((vocab_size, self.sig_bits)) < p
        weights = (np.uint64(1) << np.arange(self.sig_bits, dtype=np.uint64))
        self.signatures = (draws.astype(np.uint64) * weights).sum(
            axis=1, dtype=np.uint64)

    def word_signature(self, words: Sequence[int]) -> np.uint64:
        sig = np.uint64(0)
        for w in words:
            if not 0 <= w < self.vocab_size:
                raise ValueError(f"word {w} outside vocabulary")
            sig |= self.signatures[w]
        return sig

    def pack(self, id_: int, words: Sequence[int]) -> int:
        """Composite id: signature bits above, original id below."""
        if not 0 <= id_ < (1 << self.id_bits):
            raise ValueError(f"id {id_} exceeds the {self.id_bits}-bit budget")
        return int(self.word_signature(words) << np.uint64(self.id_bits)) | id_

    def pack_many(self, ids: Sequence[int], item_words: Sequence[Sequence[int]]
                  ) -> np.ndarray:
        return np.array([self.pack(int(i), w) for i, w in zip(ids, item_words)],
                        dtype=np.int64)

    def extract_id(self, composite: np.ndarray | int) -> np.ndarray | int:
        mask = (1 << self.id_bits) - 1
        if np.isscalar(composite):
            return int(composite) & mask
        return np.asarray(composite, dtype=np.int64) & mask

    def query_bits(self, words: Sequence[int]) -> np.uint64:
        """s_q positioned over the signature region (id bits zero)."""
        return self.word_signature(words) << np.uint64(self.id_bits)

    def prefilter(self, s_q: np.uint64, composite: np.ndarray) -> np.ndarray:
        """May-match test: False certainly rejects, True needs the exact check."""
        s_i = np.asarray(composite).astype(np.uint64)
        return (~s_i & s_q) == np.uint64(0)


def signature_prefilter(s_q: int, s_i: int) -> bool:
    """Scalar form of the may-match test: (NOT s_i) AND s_q == 0."""
    return (~np.uint64(s_i)) & np.uint64(s_q) == np.uint64(0)


# --- postings ---------------------------------------------------------------------

class WordPostings:
    """Sorted per-word posting lists over item ids."""

    def __init__(self, item_words: Sequence[Sequence[int]], vocab_size: int):
        self.n = len(item_words)
        self.vocab_size = vocab_size
        buckets: dict[int, list[int]] = {}
        for i, words in enumerate(item_words):
            for w in words:
                buckets.setdefault(int(w), []).append(i)
        self.lists = {w: np.array(sorted(ids), dtype=np.int64)
                      for w, ids in buckets.items()}

    def list_size(self, word: int) -> int:
        return len(self.lists.get(word, ()))

    def posting(self, word: int) -> np.ndarray:
        return self.lists.get(word, np.empty(0, dtype=np.int64))

    def contains(self, item: int, word: int) -> bool:
        lst = self.posting(word)
        pos = int(np.searchsorted(lst, item))
        return pos < len(lst) and lst[pos] == item

    def contains_all(self, item: int, words: Sequence[int]) -> bool:
        return all(self.contains(item, w) for w in words)

    def intersection(self, words: Sequence[int]) -> np.ndarray:
        out: np.ndarray | None = None
        for w in words:
            lst = self.posting(w)
            out = lst if out is None else np.intersect1d(out, lst, assume_unique=True)
        return out if out is not None else np.empty(0, dtype=np.int64)


@dataclass
class WordMetadata:
    """Corpus-side bundle: signatures, postings and per-item composite ids."""

    table: WordSignatureTable
    postings: WordPostings
    item_words: list[list[int]]
    composite_ids: np.ndarray  # row i = composite id of item i


def build_word_metadata(item_words: Sequence[Sequence[int]],
                        table: WordSignatureTable) -> WordMetadata:
    words_list = [list(map(int, w)) for w in item_words]
    postings = WordPostings(words_list, table.vocab_size)
    composite = table.pack_many(range(len(words_list)), words_list)
    return WordMetadata(table, postings, words_list, composite)


# --- planner and search -------------------------------------------------------------

def plan_filtered_query(words: Sequence[int], postings: WordPostings,
                        threshold: float = DEFAULT_PLAN_THRESHOLD
                        ) -> tuple[str, np.ndarray | None]:
    """Pick vector-first or metadata-first from the estimated match count.

    Single word: the match count is the posting size. Two words: estimated as
    L1*L2/N (independence). Metadata-first is chosen when the estimated
    fraction is below the threshold, and then the true intersection is
    computed. Three or more words fall back to vector-first.
    """
    words = list(words)
    if not words:
        raise ValueError("word query must be non-empty")
    sizes = [postings.list_size(w) for w in words]
    if any(s == 0 for s in sizes):
        return "empty", np.empty(0, dtype=np.int64)
    if len(words) > 2:
        return "vector_first", None
    if len(words) == 1:
        estimate = sizes[0]
    else:
        estimate = sizes[0] * sizes[1] / postings.n
    if estimate / postings.n < threshold:
        return "metadata_first", postings.intersection(words)
    return "vector_first", None


def make_word_selector(meta: WordMetadata, words: Sequence[int]) -> IdSelector:
    """Selector over composite ids: signature prefilter, then exact postings."""
    s_q = meta.table.query_bits(words)

    def check(ids: np.ndarray) -> np.ndarray:
        may = meta.table.prefilter(s_q, ids)
        out = np.zeros(len(ids), dtype=bool)
        for pos in np.nonzero(may)[0]:
            true_id = meta.table.extract_id(int(ids[pos]))
            out[pos] = meta.postings.contains_all(true_id, words)
        return out

    return IdSelectorFunction(check)


def filtered_search(index: IvfIndex, q: np.ndarray, k: int,
                    selector: IdSelector | None = None,
                    words: Sequence[int] | None = None,
                    meta: WordMetadata | None = None,
                    db: np.ndarray | None = None,
                    nprobe: int | None = None,
                    threshold: float = DEFAULT_PLAN_THRESHOLD,
                    plan: str | None = None) -> SearchResult:
    """Search restricted to ids passing a predicate.

    Either pass ``selector`` directly, or pass ``words`` plus the corpus
    ``meta`` for bag-of-words filtering. The word path picks vector-first or
    metadata-first per query unless ``plan`` pins one; metadata-first needs
    ``db`` (raw vectors, row = item id) for its brute-force stage.
    """
    q = as_vectors(q, index.d)
    if selector is not None:
        return ivf_search(index, q, k, nprobe, selector=selector)[0]
    if words is None or meta is None:
        raise ValueError("pass either a selector or words plus corpus metadata")
    chosen = plan or plan_filtered_query(words, meta.postings, threshold)[0]
    if chosen == "empty":
        ids = np.full((q.shape[0], k), -1, dtype=np.int64)
        pad = -np.inf if index.metric.descending else np.inf
        return SearchResult(ids, np.full((q.shape[0], k), pad, np.float32), k)
    if chosen == "metadata_first":
        candidates = plan_filtered_query(words, meta.postings, threshold)[1] \
            if plan is None else meta.postings.intersection(words)
        if db is None:
            raise ValueError("metadata-first needs the raw vectors (db=...)")
        return _bruteforce_over_candidates(index, q, k, candidates, meta, db)
    return ivf_search(index, q, k, nprobe, selector=make_word_selector(meta, words))[0]


def _bruteforce_over_candidates(index: IvfIndex, q: np.ndarray, k: int,
                                candidates: np.ndarray, meta: WordMetadata,
                                db: np.ndarray) -> SearchResult:
    nq = q.shape[0]
    out_ids = np.full((nq, k), -1, dtype=np.int64)
    pad = -np.inf if index.metric.descending else np.inf
    out_dist = np.full((nq, k), pad, dtype=np.float32)
    if len(candidates) == 0:
        return SearchResult(out_ids, out_dist, k)
    vecs = as_vectors(db, index.d)[candidates]
    comp = meta.composite_ids[candidates]
    dmat = pairwise_distances(q, vecs, index.metric)
    desc = index.metric.descending
    for i in range(nq):
        order = np.lexsort((comp, -dmat[i] if desc else dmat[i]))[:k]
        out_ids[i, : len(order)] = comp[order]
        out_dist[i, : len(order)] = dmat[i][order]
    return SearchResult(out_ids, out_dist, k)


def prefilter_hit_rate(meta: WordMetadata, queries: Sequence[Sequence[int]]) -> float:
    """Fraction of non-matching items the prefilter fails to reject (lower is
    better); the complement is the share of exact-predicate calls avoided."""
    passes = 0
    nonmatch = 0
    for words in queries:
        s_q = meta.table.query_bits(words)
        may = meta.table.prefilter(s_q, meta.composite_ids)
        exact = np.array([meta.postings.contains_all(i, words)
                          for i in range(meta.postings.n)])
        nonmatch += int((~exact).sum())
        passes += int((may & ~exact).sum())
    if nonmatch == 0:
        return 0.0
    return passes / nonmatch
