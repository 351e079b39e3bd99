"""Codec hierarchy: k-means, scalar, product, additive quantizers."""

import itertools

import numpy as np
import pytest

from annkit.quantize import (AdditiveCodec, KMeansCodec, ProductAdditiveCodec,
                             ProductCodec, ScalarCodec, _assign,
                             adc_lookup_tables, additive_from_product_additive,
                             codec_mse, kmeans_train, lsq_encode, pack_codes,
                             rq_encode, unpack_codes)


def recon_errors(codec, x, sub_codes):
    cb = codec.codebooks.astype(np.float64)
    rec = sum(cb[m][sub_codes[:, m]] for m in range(codec.m))
    diff = rec - x.astype(np.float64)
    return np.einsum("nd,nd->n", diff, diff)


def exhaustive_best_codes(codec, x):
    """All K^M codes enumerated; argmin reconstruction error, lex tie-break."""
    combos = list(itertools.product(range(codec.k), repeat=codec.m))
    cb = codec.codebooks.astype(np.float64)
    recs = np.array([sum(cb[m][c[m]] for m in range(codec.m)) for c in combos])
    out = np.empty((x.shape[0], codec.m), dtype=np.int64)
    errs = np.empty(x.shape[0])
    for i, xi in enumerate(x.astype(np.float64)):
        e = ((recs - xi) ** 2).sum(axis=1)
        best = min(range(len(combos)), key=lambda j: (e[j], combos[j]))
        out[i] = combos[best]
        errs[i] = e[best]
    return out, errs


class TestPacking:
    @pytest.mark.parametrize("nbits", [1, 4, 6, 8, 10, 16])
    def test_round_trip(self, nbits):
        rng = np.random.default_rng(nbits)
        sub = rng.integers(0, 1 << nbits, size=(20, 7))
        packed = pack_codes(sub, nbits)
        assert packed.shape[1] == -(-7 * nbits // 8)
        assert np.array_equal(unpack_codes(packed, 7, nbits), sub)


class TestKMeans:
    def test_k_equals_n_zero_mse(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(16, 4)).astype(np.float32)
        codec = kmeans_train(x, 16, niter=10)
        assert codec.mse(x) == pytest.approx(0.0, abs=1e-10)

    def test_k1_is_mean(self):
        x = np.array([[0, 0], [2, 0]], dtype=np.float32)
        codec = kmeans_train(x, 1, niter=5)
        assert codec.centroids[0].tolist() == pytest.approx([1.0, 0.0])
        assert codec.mse(x) == pytest.approx(1.0)

    def test_two_well_separated_groups(self):
        # exhaustive oracle over all 2^4 assignments of 1-d points {0,1,8,9}
        x = np.array([[0.0], [1.0], [8.0], [9.0]], dtype=np.float32)
        pts = x.ravel().astype(np.float64)
        best_mse = np.inf
        for mask in range(1, 15):
            g0 = pts[[i for i in range(4) if mask & (1 << i)]]
            g1 = pts[[i for i in range(4) if not mask & (1 << i)]]
            mse = (((g0 - g0.mean()) ** 2).sum() + ((g1 - g1.mean()) ** 2).sum()) / 4
            best_mse = min(best_mse, mse)
        assert best_mse == pytest.approx(0.25)
        codec = kmeans_train(x, 2, niter=10)
        assert sorted(codec.centroids.ravel().tolist()) == pytest.approx([0.5, 8.5])
        assert codec.mse(x) == pytest.approx(best_mse)

    @pytest.mark.parametrize("spherical", [False, True])
    def test_training_mse_non_increasing(self, spherical):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(500, 8)).astype(np.float32)
            if spherical:
                x *= rng.lognormal(0, 1, size=(500, 1)).astype(np.float32)
            codec = kmeans_train(x, 16, niter=15, spherical=spherical, seed=seed)
            hist = codec.iteration_mse
            assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))

    def test_spherical_centroids_unit_norm(self):
        rng = np.random.default_rng(1)
        x = (rng.normal(size=(300, 8)) * rng.lognormal(0, 1, (300, 1))).astype(np.float32)
        codec = kmeans_train(x, 10, niter=12, spherical=True)
        assert np.allclose(np.linalg.norm(codec.centroids, axis=1), 1.0, atol=1e-5)

    def test_errors(self):
        x = np.zeros((3, 2), dtype=np.float32)
        with pytest.raises(ValueError):
            kmeans_train(x, 4)
        with pytest.raises(ValueError):
            kmeans_train(x, 0)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(100, 4)).astype(np.float32)
        a = kmeans_train(x, 8, seed=5)
        b = kmeans_train(x, 8, seed=5)
        assert np.array_equal(a.centroids, b.centroids)

    def test_code_round_trip(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(50, 4)).astype(np.float32)
        codec = kmeans_train(x, 10, niter=8)
        codes = codec.compute_codes(x)
        assert codes.shape == (50, codec.code_size)
        rec = codec.decode(codes)
        assert np.array_equal(rec, codec.centroids[codec.assign(x)])


class TestScalarCodec:
    def test_midpoint_reconstruction_rule(self):
        codec = ScalarCodec(1, bits=8)
        codec.train(np.array([[0.0], [1.0]], dtype=np.float32))
        codes = codec.compute_codes(np.array([[0.5]], dtype=np.float32))
        assert unpack_codes(codes, 1, 8)[0, 0] == 128
        assert codec.decode(codes)[0, 0] == pytest.approx((128 + 0.5) / 256)

    def test_clamps_out_of_range(self):
        codec = ScalarCodec(1, bits=8)
        codec.train(np.array([[0.0], [1.0]], dtype=np.float32))
        codes = codec.compute_codes(np.array([[5.0], [-3.0]], dtype=np.float32))
        lv = unpack_codes(codes, 1, 8)[:, 0]
        assert lv.tolist() == [255, 0]

    @pytest.mark.parametrize("bits", [4, 6, 8])
    def test_code_size(self, bits):
        codec = ScalarCodec(10, bits=bits)
        assert codec.code_size == -(-10 * bits // 8)

    def test_untrained_rejected(self):
        with pytest.raises(RuntimeError):
            ScalarCodec(2).compute_codes(np.zeros((1, 2), dtype=np.float32))

    def test_uniform_quantization_noise(self):
        # b=8 on uniform [0,1]: MSE per dim ~ (1/256)^2 / 12
        rng = np.random.default_rng(4)
        d = 8
        x = rng.random((100_000, d), dtype=np.float32)
        codec = ScalarCodec(d, bits=8)
        codec.train(x)
        want = d * (1 / 256) ** 2 / 12
        assert codec.mse(x) == pytest.approx(want, rel=0.2)

    def test_invalid_bits(self):
        with pytest.raises(ValueError):
            ScalarCodec(4, bits=5)


class TestProductCodec:
    def test_m_must_divide_d(self):
        with pytest.raises(ValueError):
            ProductCodec(10, 3)

    def test_exact_when_codebook_covers_data(self):
        rng = np.random.default_rng(5)
        # each 2-d sub-vector drawn from exactly 16 distinct values
        vocab = rng.normal(size=(2, 16, 2)).astype(np.float32)
        picks = rng.integers(0, 16, size=(400, 2))
        x = np.hstack([vocab[0][picks[:, 0]], vocab[1][picks[:, 1]]])
        codec = ProductCodec(4, 2, nbits=4, niter=30, seed=1)
        codec.train(x)
        assert codec.mse(x) == pytest.approx(0.0, abs=1e-8)

    def test_more_bits_lower_mse(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2000, 8)).astype(np.float32)
        small = ProductCodec(8, 2, nbits=4, seed=0)
        big = ProductCodec(8, 2, nbits=8, seed=0)
        small.train(x)
        big.train(x)
        assert big.mse(x) <= small.mse(x)

    def test_round_trip_shape_and_determinism(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(100, 8)).astype(np.float32)
        codec = ProductCodec(8, 4, nbits=6, seed=2)
        codec.train(x)
        c1, c2 = codec.compute_codes(x), codec.compute_codes(x)
        assert np.array_equal(c1, c2)
        assert c1.shape == (100, codec.code_size)
        assert codec.decode(c1).shape == x.shape


class TestAdditiveRq:
    def make_trained(self, m=2, nbits=2, d=4, n=300, seed=0, **kw):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, d)).astype(np.float32)
        codec = AdditiveCodec(d, m, nbits, variant="rq", seed=seed, **kw)
        codec.train(x)
        return codec, x

    def test_m1_equals_kmeans_assignment(self):
        codec, x = self.make_trained(m=1, nbits=3)
        sub = codec.unpack(codec.compute_codes(x))
        a, _ = _assign(x.astype(np.float64), codec.codebooks[0].astype(np.float64), False)
        assert np.array_equal(sub[:, 0], a)

    def test_beam_covering_space_matches_exhaustive(self):
        codec, x = self.make_trained(m=2, nbits=2, beam_size=16)
        x = x[:100]
        sub = codec.unpack(codec.compute_codes(x))
        want, _ = exhaustive_best_codes(codec, x)
        assert np.array_equal(sub, want)

    def test_lut_path_identical_codes(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(100, 8)).astype(np.float32)
        direct = AdditiveCodec(8, 4, 4, variant="rq", beam_size=8, seed=3)
        direct.train(x)
        lut = AdditiveCodec(8, 4, 4, variant="rq", beam_size=8, seed=3,
                            use_beam_lut=True)
        lut.train(x)
        assert np.array_equal(direct.codebooks, lut.codebooks)
        assert np.array_equal(direct.compute_codes(x), lut.compute_codes(x))

    def test_beam_growth_monotone_mse(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(200, 8)).astype(np.float32)
        base = AdditiveCodec(8, 4, 3, variant="rq", beam_size=1, seed=4)
        base.train(x)
        prev = np.inf
        for b in (1, 2, 4, 8):
            codec = AdditiveCodec(8, 4, 3, variant="rq", beam_size=b, seed=4)
            codec.codebooks = base.codebooks.copy()
            codec.is_trained = True
            codec._refresh_tables()
            cur = codec.mse(x)
            assert cur <= prev + 1e-9
            prev = cur

    def test_decode_is_sum_of_entries(self):
        codec, x = self.make_trained(m=3, nbits=2)
        codes = codec.compute_codes(x[:10])
        sub = codec.unpack(codes)
        want = sum(codec.codebooks[m][sub[:, m]] for m in range(3))
        assert np.array_equal(codec.decode(codes), want)

    def test_encode_determinism(self):
        codec, x = self.make_trained(m=4, nbits=3, beam_size=4)
        assert np.array_equal(codec.compute_codes(x), codec.compute_codes(x))

    def test_wrapper_guard(self):
        codec, x = self.make_trained()
        with pytest.raises(ValueError):
            lsq_encode(codec, x)


class TestAdditiveLsq:
    def make_trained(self, m=2, nbits=2, d=4, n=200, seed=0, **kw):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, d)).astype(np.float32)
        codec = AdditiveCodec(d, m, nbits, variant="lsq", seed=seed, **kw)
        codec.train(x)
        return codec, x

    def test_icm_never_worse_than_initial(self):
        codec, x = self.make_trained(ils_iters=0)
        rng = np.random.default_rng(10)
        init = rng.integers(0, codec.k, size=(len(x), codec.m))
        before = recon_errors(codec, x, init)
        out = codec.unpack(lsq_encode(codec, x, initial_codes=init))
        after = recon_errors(codec, x, out)
        assert np.all(after <= before + 1e-9)

    def test_finds_exhaustive_optimum_usually(self):
        codec, x = self.make_trained(m=2, nbits=2, ils_iters=8, n=100)
        sub = codec.unpack(codec.compute_codes(x))
        got = recon_errors(codec, x, sub)
        _, want = exhaustive_best_codes(codec, x)
        hits = int((got <= want + 1e-9).sum())
        assert hits >= 90

    def test_seeded_determinism(self):
        codec, x = self.make_trained(m=3, nbits=3, ils_iters=4)
        assert np.array_equal(codec.compute_codes(x), codec.compute_codes(x))


class TestLookupTables:
    def make_rq(self, seed=0, norm_mode="none"):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(300, 8)).astype(np.float32)
        codec = AdditiveCodec(8, 3, 3, variant="rq", seed=seed, norm_mode=norm_mode)
        codec.train(x)
        return codec, x, rng

    def test_zero_query_zero_tables(self):
        codec, _, _ = self.make_rq()
        assert np.all(adc_lookup_tables(codec, np.zeros(8, dtype=np.float32)) == 0)

    def test_lut_sum_equals_decode_dot(self):
        codec, x, rng = self.make_rq(1)
        q = rng.normal(size=8).astype(np.float32)
        lut = adc_lookup_tables(codec, q)
        codes = codec.compute_codes(x[:50])
        sub = codec.unpack(codes)
        got = lut[np.arange(codec.m), sub].sum(axis=1)
        want = codec.decode(codes) @ q
        assert got == pytest.approx(want, rel=1e-4, abs=1e-4)

    def test_product_lut_entry(self):
        codec = ProductCodec(4, 2, nbits=1)
        codec.codebooks = np.array([[[2.0, 3.0], [0.0, 0.0]],
                                    [[0.0, 0.0], [1.0, 1.0]]], dtype=np.float32)
        codec.is_trained = True
        lut = codec.ip_lookup_tables(np.array([1, 0, 0, 1], dtype=np.float32))
        assert lut[0, 0] == pytest.approx(2.0)

    def test_unsupported_codec_rejected(self):
        sc = ScalarCodec(4)
        with pytest.raises(TypeError):
            adc_lookup_tables(sc, np.zeros(4, dtype=np.float32))


class TestCompressedL2:
    def make(self, norm_mode, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(400, 8)).astype(np.float32)
        codec = AdditiveCodec(8, 3, 4, variant="rq", seed=seed, norm_mode=norm_mode)
        codec.train(x)
        return codec, x, rng

    def test_stored_f32_matches_decode(self):
        codec, x, rng = self.make("stored_f32")
        q = rng.normal(size=8).astype(np.float32)
        codes = codec.compute_codes(x[:100])
        got = codec.compressed_l2(q, codes)
        rec = codec.decode(codes).astype(np.float64)
        want = ((rec - q.astype(np.float64)) ** 2).sum(axis=1)
        assert got == pytest.approx(want, rel=1e-4, abs=1e-4)

    def test_from_lut_matches_stored(self):
        codec_f, x, rng = self.make("stored_f32", seed=1)
        codec_l = AdditiveCodec(8, 3, 4, variant="rq", seed=1, norm_mode="from_lut")
        codec_l.codebooks = codec_f.codebooks.copy()
        codec_l.is_trained = True
        codec_l._refresh_tables()
        q = rng.normal(size=8).astype(np.float32)
        codes_f = codec_f.compute_codes(x[:100])
        codes_l = codec_l.compute_codes(x[:100])
        a = codec_f.compressed_l2(q, codes_f)
        b = codec_l.compressed_l2(q, codes_l)
        assert b == pytest.approx(a, rel=1e-3, abs=1e-3)

    def test_query_at_reconstruction_is_zero(self):
        codec, x, _ = self.make("stored_f32", seed=2)
        codes = codec.compute_codes(x[:5])
        q = codec.decode(codes)[0]
        assert abs(codec.compressed_l2(q, codes[:1])[0]) <= 1e-4

    def test_norm_mode_none_rejected(self):
        codec, x, rng = self.make("none", seed=3)
        with pytest.raises(RuntimeError):
            codec.compressed_l2(rng.normal(size=8).astype(np.float32),
                                codec.compute_codes(x[:2]))

    def test_stored_q8_close(self):
        codec, x, rng = self.make("stored_q8", seed=4)
        q = rng.normal(size=8).astype(np.float32)
        codes = codec.compute_codes(x[:100])
        rec = codec.decode(codes).astype(np.float64)
        want = ((rec - q.astype(np.float64)) ** 2).sum(axis=1)
        got = codec.compressed_l2(q, codes)
        # 8-bit quantized norms: bounded by one bin of the norm range
        bin_w = (codec.norm_range[1] - codec.norm_range[0]) / 256
        assert np.all(np.abs(got - want) <= bin_w)

    def test_adc_triangle_bound(self):
        codec, x, rng = self.make("stored_f32", seed=5)
        q = rng.normal(size=8).astype(np.float32)
        codes = codec.compute_codes(x[:100])
        rec = codec.decode(codes).astype(np.float64)
        adc = np.sqrt(np.maximum(codec.compressed_l2(q, codes), 0))
        true = np.linalg.norm(x[:100].astype(np.float64) - q, axis=1)
        slack = np.linalg.norm(x[:100].astype(np.float64) - rec, axis=1)
        assert np.all(np.abs(adc - true) <= slack + 1e-6)


class TestHierarchy:
    def test_initialization_equivalences_and_training_order(self):
        rng = np.random.default_rng(11)
        d, bits = 8, 4
        x = rng.normal(size=(2000, d)).astype(np.float32)

        sq = ScalarCodec(d, bits=bits)
        sq.train(x)
        mse_sq = sq.mse(x)

        pq_init = ProductCodec.from_scalar(sq)
        assert pq_init.mse(x) == pytest.approx(mse_sq, abs=1e-6)
        pq = ProductCodec(d, d, bits, niter=15, seed=0)
        pq.train(x, init_codebooks=pq_init.codebooks)
        mse_pq = pq.mse(x)
        assert mse_pq <= mse_sq + 1e-6

        pa_init = ProductAdditiveCodec.from_product(pq)
        assert pa_init.mse(x) == pytest.approx(mse_pq, abs=1e-6)
        pa_init.refine(x, iters=4)
        mse_pa = pa_init.mse(x)
        assert mse_pa <= mse_pq + 1e-6

        aq_init = additive_from_product_additive(pa_init, variant="lsq", ils_iters=0)
        assert aq_init.mse(x) == pytest.approx(mse_pa, abs=1e-6)
        aq_init.train_from_codebooks(x, aq_init.codebooks, iters=4)
        mse_aq = aq_init.mse(x)
        assert mse_aq <= mse_pa + 1e-6

    def test_codec_mse_helper(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(100, 4)).astype(np.float32)
        sc = ScalarCodec(4, bits=8)
        sc.train(x)
        assert codec_mse(sc, x) == sc.mse(x)
