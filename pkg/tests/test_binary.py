"""Binarization, Hamming distance and binary flat search."""

import numpy as np
import pytest

from annkit.binary import (BinaryFlatIndex, BinaryVectorSet, binarize, binary_knn,
                           hamming, median_thresholds, unpack_binary)
from annkit.transform import random_rotation


def bit_loop_hamming(a_bits, b_bits):
    return int(sum(1 for x, y in zip(a_bits, b_bits) if x != y))


class TestBinarize:
    def test_sign_pattern(self):
        x = np.array([[1, -1, 2, -3, 4, -5, 6, -7]], dtype=np.float32)
        bset = binarize(x)
        assert unpack_binary(bset)[0].tolist() == [1, 0, 1, 0, 1, 0, 1, 0]

    def test_strict_inequality_at_threshold(self):
        x = np.full((3, 8), 2.5, dtype=np.float32)
        bset = binarize(x, np.full(8, 2.5, dtype=np.float32))
        assert np.all(unpack_binary(bset) == 0)

    def test_median_thresholds_balance_bits(self):
        rng = np.random.default_rng(0)
        x = (rng.normal(size=(2001, 16)) * rng.random(16) * 3 + rng.normal(size=16)
             ).astype(np.float32)
        thr = median_thresholds(x)
        rates = unpack_binary(binarize(x, thr)).mean(axis=0)
        assert np.all(rates >= 0.4) and np.all(rates <= 0.6)

    def test_non_byte_dimension_rejected(self):
        with pytest.raises(ValueError):
            binarize(np.zeros((1, 7), dtype=np.float32))


class TestHamming:
    def test_known_nibbles(self):
        a = np.array([0b1010], dtype=np.uint8)
        b = np.array([0b0011], dtype=np.uint8)
        assert hamming(a, b) == 2

    def test_identity_zero(self):
        a = np.array([137, 9, 255], dtype=np.uint8)
        assert hamming(a, a) == 0

    def test_matches_bit_loop_oracle(self):
        rng = np.random.default_rng(1)
        packed = rng.integers(0, 256, size=(50, 8)).astype(np.uint8)
        bits = np.unpackbits(packed, axis=1, bitorder="little")
        for i in range(0, 50, 7):
            for j in range(0, 50, 5):
                assert hamming(packed[i], packed[j]) == bit_loop_hamming(bits[i], bits[j])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            hamming(np.zeros(2, dtype=np.uint8), np.zeros(3, dtype=np.uint8))

    def test_metric_axioms_on_sampled_triples(self):
        rng = np.random.default_rng(2)
        packed = rng.integers(0, 256, size=(30, 16)).astype(np.uint8)
        for _ in range(200):
            i, j, l = rng.integers(0, 30, size=3)
            dij = hamming(packed[i], packed[j])
            assert dij == hamming(packed[j], packed[i])
            assert (dij == 0) == bool(np.array_equal(packed[i], packed[j]))
            assert dij <= hamming(packed[i], packed[l]) + hamming(packed[l], packed[j])


class TestBinaryKnn:
    def make(self, n=200, d=128, seed=3):
        rng = np.random.default_rng(seed)
        packed = rng.integers(0, 256, size=(n, d // 8)).astype(np.uint8)
        index = BinaryFlatIndex(d)
        index.add(BinaryVectorSet(packed, d))
        return index, packed

    def test_stored_code_is_top1(self):
        index, packed = self.make()
        res = binary_knn(index, packed[17], 1)
        assert res.ids[0, 0] == 17
        assert res.distances[0, 0] == 0

    def test_k_equals_ntotal_permutation_sorted(self):
        index, packed = self.make(n=50)
        res = binary_knn(index, packed[:3], 50)
        for row_ids, row_d in zip(res.ids, res.distances):
            assert sorted(row_ids.tolist()) == list(range(50))
            pairs = list(zip(row_d.tolist(), row_ids.tolist()))
            assert pairs == sorted(pairs)

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(4)
        nb, nq, d = 400, 20, 128
        db = rng.integers(0, 256, size=(nb, d // 8)).astype(np.uint8)
        q = rng.integers(0, 256, size=(nq, d // 8)).astype(np.uint8)
        index = BinaryFlatIndex(d)
        index.add(BinaryVectorSet(db, d))
        res = binary_knn(index, BinaryVectorSet(q, d), 10)
        db_bits = np.unpackbits(db, axis=1, bitorder="little")
        q_bits = np.unpackbits(q, axis=1, bitorder="little")
        for i in range(nq):
            scored = sorted((bit_loop_hamming(q_bits[i], db_bits[j]), j)
                            for j in range(nb))[:10]
            assert res.ids[i].tolist() == [s[1] for s in scored]
            assert res.distances[i].tolist() == [s[0] for s in scored]

    def test_dimension_mismatch(self):
        index, _ = self.make(d=64)
        with pytest.raises(ValueError):
            index.search(np.zeros((1, 16), dtype=np.uint8), 1)

    def test_custom_ids(self):
        rng = np.random.default_rng(5)
        packed = rng.integers(0, 256, size=(10, 4)).astype(np.uint8)
        index = BinaryFlatIndex(32)
        index.add_with_ids(BinaryVectorSet(packed, 32), np.arange(10) * 7 + 3)
        res = index.search(packed[4], 1)
        assert res.ids[0, 0] == 4 * 7 + 3


class TestCosineSketch:
    def test_hamming_tracks_angle(self):
        # random-hyperplane sketch: rotate, take signs; Hamming distance
        # between sketches correlates with the angle between the vectors
        rng = np.random.default_rng(6)
        d_in, d_bits = 32, 256
        x = rng.normal(size=(200, d_in)).astype(np.float32)
        lift = rng.normal(size=(d_in, d_bits)).astype(np.float32) / np.sqrt(d_in)
        proj = (x @ lift).astype(np.float32)
        sketches = binarize(proj)
        bits = unpack_binary(sketches)
        pairs = rng.integers(0, 200, size=(1000, 2))
        hams, angles = [], []
        xs = x / np.linalg.norm(x, axis=1, keepdims=True)
        for i, j in pairs:
            if i == j:
                continue
            hams.append(int((bits[i] != bits[j]).sum()))
            angles.append(float(np.arccos(np.clip(xs[i] @ xs[j], -1, 1))))
        def ranks(v):
            order = np.argsort(v)
            r = np.empty(len(v))
            r[order] = np.arange(len(v))
            return r
        rh, ra = ranks(hams), ranks(angles)
        rho = float(np.corrcoef(rh, ra)[0, 1])
        assert rho >= 0.8
