"""Filtered search: selectors, word signatures, planner."""

import numpy as np
import pytest

from annkit.filter import (IdSelectorArray, IdSelectorBitmap, IdSelectorRange,
                           WordSignatureTable, build_word_metadata,
                           filtered_search, make_word_selector,
                           plan_filtered_query, prefilter_hit_rate,
                           signature_prefilter)
from annkit.flat import FlatIndex, flat_search
from annkit.ivf import ivf_search, ivf_train


def zipf_words(rng, vocab, n_items, per_item=3):
    weights = 1.0 / np.arange(1, vocab + 1)
    weights /= weights.sum()
    return [sorted(set(rng.choice(vocab, size=per_item, p=weights).tolist()))
            for _ in range(n_items)]


def make_corpus(n=500, d=8, vocab=50, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)).astype(np.float32)
    words = zipf_words(rng, vocab, n)
    table = WordSignatureTable(vocab, n_max=n, p=0.1, seed=seed)
    meta = build_word_metadata(words, table)
    index = ivf_train(x, 8, nprobe=8, seed=seed)
    index.add_with_ids(x, meta.composite_ids)
    return index, x, meta, words, rng


class TestSelectors:
    def test_range(self):
        sel = IdSelectorRange(10, 20)
        got = sel(np.array([5, 10, 19, 20]))
        assert got.tolist() == [False, True, True, False]

    def test_array(self):
        sel = IdSelectorArray([4, 2, 9])
        assert sel(np.array([2, 3, 4, 9, 10])).tolist() == [True, False, True, True, False]

    def test_bitmap(self):
        bm = np.zeros(8, dtype=bool)
        bm[[1, 5]] = True
        sel = IdSelectorBitmap(bm)
        assert sel(np.array([0, 1, 5, 100])).tolist() == [False, True, True, False]


class TestSignatures:
    def test_pack_without_words_is_identity(self):
        table = WordSignatureTable(10, n_max=1000, seed=1)
        assert table.pack(123, []) == 123

    def test_single_word_signature(self):
        table = WordSignatureTable(10, n_max=1000, seed=2)
        composite = table.pack(5, [3])
        assert composite & ((1 << table.id_bits) - 1) == 5
        assert np.uint64(composite >> table.id_bits) == table.signatures[3]

    def test_or_of_signatures(self):
        table = WordSignatureTable(10, n_max=1000, seed=3)
        got = np.uint64(table.pack(0, [1, 2]))
        assert got == table.signatures[1] | table.signatures[2]

    def test_id_budget_enforced(self):
        table = WordSignatureTable(4, n_max=100, seed=4)
        with pytest.raises(ValueError):
            table.pack(1 << table.id_bits, [0])

    def test_round_trip_ids(self):
        table = WordSignatureTable(30, n_max=10_000, seed=5)
        rng = np.random.default_rng(0)
        ids = rng.integers(0, 10_000, size=200)
        words = [rng.choice(30, size=2).tolist() for _ in ids]
        comp = table.pack_many(ids, words)
        assert np.array_equal(table.extract_id(comp), ids)

    def test_soundness_never_rejects_subset(self):
        # query words a subset of item words => prefilter must pass
        rng = np.random.default_rng(6)
        table = WordSignatureTable(40, n_max=1000, p=0.2, seed=6)
        for _ in range(2000):
            item = rng.choice(40, size=rng.integers(1, 6), replace=False).tolist()
            qn = rng.integers(1, min(3, len(item)) + 1)
            query = rng.choice(item, size=qn, replace=False).tolist()
            s_i = table.pack(0, item)
            s_q = table.query_bits(query)
            assert signature_prefilter(s_q, s_i)

    def test_rejection_without_aliasing(self):
        # disjoint single-bit signatures make the prefilter exact
        table = WordSignatureTable(8, n_max=100, seed=0)
        table.signatures = (np.uint64(1) << np.arange(8, dtype=np.uint64))
        s_q = table.query_bits([3])
        hit = table.pack(0, [3])
        miss = table.pack(1, [2, 5])
        assert signature_prefilter(s_q, hit)
        assert not signature_prefilter(s_q, miss)

    def test_all_zero_signatures_pass_everything(self):
        table = WordSignatureTable(8, n_max=100, p=0.0, seed=7)
        s_q = table.query_bits([0, 1])
        assert signature_prefilter(s_q, table.pack(5, [7]))


class TestPlanner:
    def test_paper_estimator_example(self):
        # L1=1000, L2=2000, N=1e7 -> S=200, S/N=2e-5 < 3e-4 -> metadata first
        class FakePostings:
            n = 10 ** 7
            def list_size(self, w):
                return {1: 1000, 2: 2000}[w]
            def intersection(self, words):
                return np.arange(3)
        plan, cand = plan_filtered_query([1, 2], FakePostings())
        assert plan == "metadata_first"
        assert cand.tolist() == [0, 1, 2]

    def test_heavy_single_word_is_vector_first(self):
        class FakePostings:
            n = 1000
            def list_size(self, w):
                return 500
        plan, _ = plan_filtered_query([1], FakePostings())
        assert plan == "vector_first"

    def test_unknown_word_short_circuits(self):
        meta = make_corpus()[2]
        plan, cand = plan_filtered_query([10 ** 6], meta.postings)
        assert plan == "empty" and len(cand) == 0

    def test_three_words_fall_back(self):
        meta = make_corpus()[2]
        plan, _ = plan_filtered_query([0, 1, 2], meta.postings)
        assert plan == "vector_first"


class TestFilteredSearch:
    def test_accept_all_equals_plain_search(self):
        index, x, meta, words, rng = make_corpus()
        q = rng.normal(size=(10, 8)).astype(np.float32)
        plain, _ = ivf_search(index, q, 5, nprobe=8)
        filt = filtered_search(index, q, 5,
                               selector=IdSelectorRange(0, 1 << 62), nprobe=8)
        assert np.array_equal(plain.ids, filt.ids)

    def test_single_id_selector(self):
        index, x, meta, words, rng = make_corpus()
        target = int(meta.composite_ids[42])
        res = filtered_search(index, x[:3], 1,
                              selector=IdSelectorArray([target]), nprobe=8)
        assert np.all(res.ids == target)

    def test_word_query_matches_bruteforce_oracle(self):
        index, x, meta, words, rng = make_corpus(n=800, seed=1)
        q = rng.normal(size=(20, 8)).astype(np.float32)
        query_words = [0, 1]
        res = filtered_search(index, q, 5, words=query_words, meta=meta,
                              nprobe=8, plan="vector_first")
        # oracle: brute force over the exact predicate's support
        support = [i for i in range(800)
                   if set(query_words) <= set(meta.item_words[i])]
        assert support, "test corpus must contain matches"
        oracle = FlatIndex(8)
        oracle.add_with_ids(x[support], meta.composite_ids[support])
        want = flat_search(oracle, q, 5)
        assert np.array_equal(res.ids, want.ids)

    def test_plan_independence(self):
        index, x, meta, words, rng = make_corpus(n=600, seed=2)
        q = rng.normal(size=(15, 8)).astype(np.float32)
        query_words = [2, 3]
        a = filtered_search(index, q, 5, words=query_words, meta=meta,
                            nprobe=8, plan="vector_first")
        b = filtered_search(index, q, 5, words=query_words, meta=meta,
                            db=x, plan="metadata_first")
        assert np.array_equal(a.ids, b.ids)

    def test_empty_plan_returns_sentinels(self):
        index, x, meta, words, rng = make_corpus(seed=3)
        res = filtered_search(index, x[:2], 3, words=[10 ** 5], meta=meta)
        assert np.all(res.ids == -1)


class TestHitRate:
    def test_zero_p_counts_every_candidate(self):
        rng = np.random.default_rng(8)
        words = zipf_words(rng, 20, 200)
        table = WordSignatureTable(20, n_max=200, p=0.0, seed=8)
        meta = build_word_metadata(words, table)
        rate = prefilter_hit_rate(meta, [[0], [1, 2]])
        assert rate == 1.0

    def test_disjoint_bits_reject_every_nonmatch(self):
        rng = np.random.default_rng(9)
        vocab = 16
        words = [[int(w)] for w in rng.integers(0, vocab, size=100)]
        table = WordSignatureTable(vocab, n_max=100, seed=9)
        table.signatures = (np.uint64(1) << np.arange(vocab, dtype=np.uint64))
        meta = build_word_metadata(words, table)
        rate = prefilter_hit_rate(meta, [[3], [7]])
        assert rate == 0.0

    def test_interior_p_beats_half(self):
        rng = np.random.default_rng(10)
        words = zipf_words(rng, 60, 400)
        queries = [sorted(rng.choice(60, size=2, replace=False).tolist())
                   for _ in range(20)]
        rates = {}
        for p in (0.05, 0.1, 0.2, 0.5):
            table = WordSignatureTable(60, n_max=400, p=p, seed=11)
            meta = build_word_metadata(words, table)
            rates[p] = prefilter_hit_rate(meta, queries)
        assert rates[0.1] < rates[0.5]
        assert rates[0.2] < rates[0.5]
