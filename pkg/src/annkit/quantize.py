"""Vector codecs: k-means, scalar, product, and additive quantizers.

Additive quantizers come in two encoder variants, the sequential residual
encoder (beam search) and the local-search encoder (ICM with random
restarts). Both decode as the sum of one entry per codebook.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import _kernels
from .core import as_vectors

NORM_MODES = ("none", "stored_f32", "stored_q8", "from_lut")


# --- bit packing --------------------------------------------------------------

def pack_codes(sub_codes: np.ndarray, nbits: int) -> np.ndarray:
    """Pack (n, m) integer sub-codes into an LSB-first bitstream per row."""
    sub_codes = np.asarray(sub_codes)
    n, m = sub_codes.shape
    shifts = np.arange(nbits, dtype=np.uint32)
    bits = ((sub_codes[:, :, None].astype(np.uint32) >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(n, m * nbits), axis=1, bitorder="little")


def unpack_codes(codes: np.ndarray, m: int, nbits: int) -> np.ndarray:
    return _kernels.unpack_codes(np.ascontiguousarray(codes, dtype=np.uint8), m, nbits)


# --- Lloyd clustering ---------------------------------------------------------

def _assign(x64: np.ndarray, centroids: np.ndarray, by_ip: bool,
            block: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid assignment; returns (assignment, squared L2 error).

    ``by_ip`` assigns by maximum inner product (spherical clustering); the
    returned error is still the squared L2 residual so the recorded training
    curve keeps one unit.
    """
    n = x64.shape[0]
    assign = np.empty(n, dtype=np.int64)
    err = np.empty(n, dtype=np.float64)
    cnorm = np.einsum("kd,kd->k", centroids, centroids)
    xnorm_all = np.einsum("nd,nd->n", x64, x64)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        ip = x64[lo:hi] @ centroids.T
        if by_ip:
            a = ip.argmax(axis=1)
        else:
            a = (cnorm[None, :] - 2.0 * ip).argmin(axis=1)
        assign[lo:hi] = a
        rows = np.arange(hi - lo)
        err[lo:hi] = xnorm_all[lo:hi] + cnorm[a] - 2.0 * ip[rows, a]
    np.maximum(err, 0.0, out=err)
    return assign, err


def _kmeans_pp_init(x64: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x64.shape[0]
    centroids = np.empty((k, x64.shape[1]), dtype=np.float64)
    xnorm = np.einsum("nd,nd->n", x64, x64)
    first = int(rng.integers(n))
    centroids[0] = x64[first]

    def dist_to(c):
        out = xnorm + float(c @ c) - 2.0 * (x64 @ c)
        np.maximum(out, 0.0, out=out)
        return out

    d2 = dist_to(centroids[0])
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i:] = x64[rng.integers(n, size=k - i)]
            break
        nxt = int(rng.choice(n, p=d2 / total))
        centroids[i] = x64[nxt]
        np.minimum(d2, dist_to(centroids[i]), out=d2)
    return centroids


def lloyd(x: np.ndarray, k: int, niter: int = 25, spherical: bool = False,
          seed: int = 0, subsample_cap: int = 256
          ) -> tuple[np.ndarray, list[float]]:
    """Lloyd iterations with k-means++ seeding and empty-cluster splitting.

    Returns (centroids, per-iteration MSE). The MSE for iteration t is
    measured with the centroids in force during that assignment, which makes
    the recorded curve non-increasing. Training subsamples to
    ``subsample_cap * k`` points when the input is larger.
    """
    x = as_vectors(x)
    if k < 1:
        raise ValueError("k must be >= 1")
    if x.shape[0] < k:
        raise ValueError(f"need at least {k} training points, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    x64 = x.astype(np.float64)
    cap = subsample_cap * k
    if x64.shape[0] > cap:
        x64 = x64[rng.choice(x64.shape[0], size=cap, replace=False)]
    centroids = _kmeans_pp_init(x64, k, rng)
    if spherical:
        centroids = _normalize_rows(centroids)
    history: list[float] = []
    for _ in range(niter):
        assign, err = _assign(x64, centroids, by_ip=spherical)
        history.append(float(err.mean()))
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x64)
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if spherical:
            centroids[nonempty] = _normalize_rows(centroids[nonempty])
        for c in np.nonzero(~nonempty)[0]:
            donor = int(counts.argmax())
            centroids[c] = centroids[donor] * (1.0 + 1e-5)
            centroids[donor] = centroids[donor] * (1.0 - 1e-5)
            if spherical:
                centroids[c] = _normalize_rows(centroids[c][None, :])[0]
                centroids[donor] = _normalize_rows(centroids[donor][None, :])[0]
            counts[donor] /= 2
            counts[c] = counts[donor]
    return centroids, history


def _normalize_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return a / norms


# --- codec base ---------------------------------------------------------------

class Codec:
    """Trained encoder/decoder pair producing fixed-size byte codes."""

    def __init__(self, d: int):
        if d < 1:
            raise ValueError("d must be >= 1")
        self.d = int(d)
        self.is_trained = False

    @property
    def code_size(self) -> int:
        raise NotImplementedError

    def train(self, x: np.ndarray) -> None:
        raise NotImplementedError

    def compute_codes(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decode(self, codes: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_trained(self) -> None:
        if not self.is_trained:
            raise RuntimeError(f"{type(self).__name__} is not trained")

    def mse(self, x: np.ndarray) -> float:
        """Mean squared reconstruction error over x."""
        x = as_vectors(x, self.d)
        rec = self.decode(self.compute_codes(x)).astype(np.float64)
        diff = rec - x.astype(np.float64)
        return float(np.einsum("nd,nd->n", diff, diff).mean())


def codec_mse(codec: Codec, x: np.ndarray) -> float:
    return codec.mse(x)


class KMeansCodec(Codec):
    """Single-codebook vector quantizer trained with Lloyd iterations."""

    def __init__(self, d: int, k: int, niter: int = 25, spherical: bool = False,
                 seed: int = 0):
        super().__init__(d)
        if k < 1:
            raise ValueError("K must be >= 1")
        self.k = int(k)
        self.niter = niter
        self.spherical = spherical
        self.seed = seed
        self.centroids = np.empty((0, d), dtype=np.float32)
        self.iteration_mse: list[float] = []

    @property
    def nbits(self) -> int:
        return max(1, math.ceil(math.log2(self.k)))

    @property
    def code_size(self) -> int:
        return math.ceil(self.nbits / 8)

    def train(self, x: np.ndarray) -> None:
        cents, history = lloyd(x, self.k, self.niter, self.spherical, self.seed)
        self.centroids = cents.astype(np.float32)
        self.iteration_mse = history
        self.is_trained = True

    def assign(self, x: np.ndarray) -> np.ndarray:
        self._check_trained()
        x = as_vectors(x, self.d)
        a, _ = _assign(x.astype(np.float64), self.centroids.astype(np.float64),
                       by_ip=self.spherical)
        return a

    def compute_codes(self, x: np.ndarray) -> np.ndarray:
        return pack_codes(self.assign(x)[:, None], 8 * self.code_size)

    def decode(self, codes: np.ndarray) -> np.ndarray:
        self._check_trained()
        idx = unpack_codes(codes, 1, 8 * self.code_size)[:, 0]
        return self.centroids[np.minimum(idx, self.k - 1)].copy()


def kmeans_train(x: np.ndarray, k: int, niter: int = 25, spherical: bool = False,
                 seed: int = 0) -> KMeansCodec:
    codec = KMeansCodec(as_vectors(x).shape[1], k, niter, spherical, seed)
    codec.train(x)
    return codec


class ScalarCodec(Codec):
    """Uniform per-dimension quantizer at 4, 6 or 8 bits per component.

    Reconstruction at bin centers: decode(c) = vmin + (c + 0.5) * vdiff / 2^b.
    """

    def __init__(self, d: int, bits: int = 8):
        super().__init__(d)
        if bits not in (4, 6, 8):
            raise ValueError("scalar codec supports 4, 6 or 8 bits")
        self.bits = bits
        self.vmin = np.zeros(d, dtype=np.float32)
        self.vdiff = np.zeros(d, dtype=np.float32)

    @property
    def levels(self) -> int:
        return 1 << self.bits

    @property
    def code_size(self) -> int:
        return math.ceil(self.d * self.bits / 8)

    def train(self, x: np.ndarray) -> None:
        x = as_vectors(x, self.d)
        self.vmin = x.min(axis=0)
        self.vdiff = x.max(axis=0) - self.vmin
        self.is_trained = True

    def quantize_levels(self, x: np.ndarray) -> np.ndarray:
        """Per-component level indices in [0, 2^bits)."""
        self._check_trained()
        x = as_vectors(x, self.d)
        safe = np.where(self.vdiff > 0, self.vdiff, 1.0)
        lv = np.floor((x - self.vmin) / safe * self.levels).astype(np.int64)
        lv[:, self.vdiff == 0] = 0
        return np.clip(lv, 0, self.levels - 1)

    def compute_codes(self, x: np.ndarray) -> np.ndarray:
        return pack_codes(self.quantize_levels(x), self.bits)

    def reconstruction_points(self) -> np.ndarray:
        """(d, levels) table of the values each level decodes to."""
        self._check_trained()
        grid = (np.arange(self.levels, dtype=np.float32) + 0.5) / self.levels
        return self.vmin[:, None] + grid[None, :] * self.vdiff[:, None]

    def decode(self, codes: np.ndarray) -> np.ndarray:
        self._check_trained()
        lv = unpack_codes(codes, self.d, self.bits).astype(np.float32)
        return self.vmin + (lv + 0.5) * self.vdiff / self.levels


class ProductCodec(Codec):
    """Product quantizer: independent k-means codebooks over d/M sub-vectors."""

    def __init__(self, d: int, m: int, nbits: int = 8, niter: int = 25, seed: int = 0):
        super().__init__(d)
        if d % m != 0:
            raise ValueError(f"M={m} must divide d={d}")
        if not 1 <= nbits <= 16:
            raise ValueError("nbits must be in 1..16")
        self.m = m
        self.nbits = nbits
        self.k = 1 << nbits
        self.dsub = d // m
        self.niter = niter
        self.seed = seed
        self.codebooks = np.empty((m, self.k, self.dsub), dtype=np.float32)

    @property
    def code_size(self) -> int:
        return math.ceil(self.m * self.nbits / 8)

    def train(self, x: np.ndarray, init_codebooks: np.ndarray | None = None) -> None:
        """Train per-subspace codebooks; a warm start refines ``init_codebooks``
        with plain Lloyd updates (reconstruction error cannot increase)."""
        x = as_vectors(x, self.d)
        for mi in range(self.m):
            sub = x[:, mi * self.dsub:(mi + 1) * self.dsub]
            if init_codebooks is None:
                cents, _ = lloyd(sub, self.k, self.niter, seed=self.seed + mi)
            else:
                cents = _lloyd_refine(sub.astype(np.float64),
                                      init_codebooks[mi].astype(np.float64),
                                      self.niter)
            self.codebooks[mi] = cents.astype(np.float32)
        self.is_trained = True

    @classmethod
    def from_scalar(cls, sc: ScalarCodec) -> "ProductCodec":
        """Hierarchy embedding: a scalar codec is a product codec with one
        dimension per sub-vector."""
        pq = cls(sc.d, sc.d, sc.bits)
        pq.codebooks = sc.reconstruction_points()[:, :, None].copy()
        pq.is_trained = True
        return pq

    def sub_assign(self, x: np.ndarray) -> np.ndarray:
        self._check_trained()
        x = as_vectors(x, self.d)
        out = np.empty((x.shape[0], self.m), dtype=np.int64)
        for mi in range(self.m):
            sub = x[:, mi * self.dsub:(mi + 1) * self.dsub].astype(np.float64)
            out[:, mi], _ = _assign(sub, self.codebooks[mi].astype(np.float64), False)
        return out

    def compute_codes(self, x: np.ndarray) -> np.ndarray:
        return pack_codes(self.sub_assign(x), self.nbits)

    def decode(self, codes: np.ndarray) -> np.ndarray:
        self._check_trained()
        sub = unpack_codes(codes, self.m, self.nbits)
        out = np.empty((codes.shape[0], self.d), dtype=np.float32)
        for mi in range(self.m):
            out[:, mi * self.dsub:(mi + 1) * self.dsub] = self.codebooks[mi][sub[:, mi]]
        return out

    def ip_lookup_tables(self, q: np.ndarray) -> np.ndarray:
        """(m, k) table of <sub-codebook entry, query sub-vector>."""
        self._check_trained()
        q = np.asarray(q, dtype=np.float32).ravel()
        if q.shape[0] != self.d:
            raise ValueError("query dimension mismatch")
        lut = np.empty((self.m, self.k), dtype=np.float32)
        for mi in range(self.m):
            lut[mi] = self.codebooks[mi] @ q[mi * self.dsub:(mi + 1) * self.dsub]
        return lut

    def l2_lookup_tables(self, q: np.ndarray) -> np.ndarray:
        """(m, k) table of squared sub-distances, the classic ADC tables."""
        self._check_trained()
        q = np.asarray(q, dtype=np.float32).ravel()
        lut = np.empty((self.m, self.k), dtype=np.float32)
        for mi in range(self.m):
            diff = self.codebooks[mi] - q[mi * self.dsub:(mi + 1) * self.dsub]
            lut[mi] = np.einsum("kd,kd->k", diff, diff)
        return lut


def _lloyd_refine(x64: np.ndarray, centroids: np.ndarray, niter: int) -> np.ndarray:
    """Plain Lloyd updates from fixed starting centroids (no reseeding)."""
    cents = centroids.copy()
    k = cents.shape[0]
    for _ in range(niter):
        assign, _ = _assign(x64, cents, by_ip=False)
        sums = np.zeros_like(cents)
        np.add.at(sums, assign, x64)
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        nonempty = counts > 0
        cents[nonempty] = sums[nonempty] / counts[nonempty, None]
    return cents


# --- additive quantizers -------------------------------------------------------

class AdditiveCodec(Codec):
    """Additive quantizer: decode(c) = sum over codebooks of T_m[c_m].

    ``variant`` picks the encoder: "rq" (sequential residual beam search) or
    "lsq" (ICM local search with random restarts). ``norm_mode`` controls how
    the reconstruction norm needed for compressed-domain L2 is obtained.
    """

    def __init__(self, d: int, m: int, nbits: int = 4, variant: str = "rq",
                 norm_mode: str = "none", beam_size: int = 8,
                 use_beam_lut: bool = False, ils_iters: int = 4,
                 niter: int = 25, train_iters: int = 10, seed: int = 0):
        super().__init__(d)
        if variant not in ("rq", "lsq"):
            raise ValueError("variant must be 'rq' or 'lsq'")
        if norm_mode not in NORM_MODES:
            raise ValueError(f"norm_mode must be one of {NORM_MODES}")
        if beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        self.m = m
        self.nbits = nbits
        self.k = 1 << nbits
        self.variant = variant
        self.norm_mode = norm_mode
        self.beam_size = beam_size
        self.use_beam_lut = use_beam_lut
        self.ils_iters = ils_iters
        self.niter = niter
        self.train_iters = train_iters
        self.seed = seed
        self.codebooks = np.empty((m, self.k, d), dtype=np.float32)
        self.norm_range: tuple[float, float] = (0.0, 1.0)  # for stored_q8
        self._cross: np.ndarray | None = None  # (m, m, k, k) f64 cross dots
        self._cbnorm: np.ndarray | None = None  # (m, k) f64 entry norms

    @property
    def norm_bytes(self) -> int:
        return {"none": 0, "stored_f32": 4, "stored_q8": 1, "from_lut": 0}[self.norm_mode]

    @property
    def code_size(self) -> int:
        return math.ceil(self.m * self.nbits / 8) + self.norm_bytes

    # -- training --

    def train(self, x: np.ndarray) -> None:
        x = as_vectors(x, self.d)
        self._train_residual_init(x)
        if self.variant == "lsq":
            self._train_em(x.astype(np.float64), self.train_iters)
        self._finish_training(x)

    def train_from_codebooks(self, x: np.ndarray, codebooks: np.ndarray,
                             iters: int | None = None) -> None:
        """Refine the given codebooks with ICM-reencode / least-squares EM
        rounds; the reconstruction error is non-increasing per round."""
        x = as_vectors(x, self.d)
        self.codebooks = np.asarray(codebooks, dtype=np.float32).reshape(
            self.m, self.k, self.d).copy()
        self.is_trained = True
        self._refresh_tables()
        self._train_em(x.astype(np.float64), self.train_iters if iters is None else iters)
        self._finish_training(x)

    def set_codebooks(self, codebooks: np.ndarray) -> None:
        """Adopt codebooks verbatim (no training step)."""
        self.codebooks = np.asarray(codebooks, dtype=np.float32).reshape(
            self.m, self.k, self.d).copy()
        self.is_trained = True
        self._refresh_tables()
        self._set_norm_range_from_codebooks()

    def _train_residual_init(self, x: np.ndarray) -> None:
        residual = x.astype(np.float64)
        for mi in range(self.m):
            cents, _ = lloyd(residual.astype(np.float32), self.k, self.niter,
                             seed=self.seed + mi)
            self.codebooks[mi] = cents.astype(np.float32)
            a, _ = _assign(residual, cents, by_ip=False)
            residual = residual - cents[a]
        self.is_trained = True
        self._refresh_tables()

    def _train_em(self, x64: np.ndarray, iters: int) -> None:
        codes = self._encode_greedy(x64)
        for _ in range(iters):
            codes, _ = self._icm(x64, codes, sweeps=2)
            self._ls_codebook_update(x64, codes)

    def _ls_codebook_update(self, x64: np.ndarray, codes: np.ndarray) -> None:
        # least squares min_T || B T - X ||_F with one-hot design B (n, m*k)
        n = x64.shape[0]
        mk = self.m * self.k
        design = np.zeros((n, mk), dtype=np.float64)
        rows = np.arange(n)
        for mi in range(self.m):
            design[rows, mi * self.k + codes[:, mi]] = 1.0
        sol, *_ = np.linalg.lstsq(design, x64, rcond=None)
        self.codebooks = sol.reshape(self.m, self.k, self.d).astype(np.float32)
        self._refresh_tables()

    def _finish_training(self, x: np.ndarray) -> None:
        self._refresh_tables()
        if self.norm_mode == "stored_q8":
            rec = self.decode_raw(self._encode_sub(x))
            norms = np.einsum("nd,nd->n", rec, rec)
            lo, hi = float(norms.min()), float(norms.max())
            self.norm_range = (lo, hi if hi > lo else lo + 1.0)
        self.is_trained = True

    def _set_norm_range_from_codebooks(self) -> None:
        if self.norm_mode == "stored_q8":
            # conservative bound: max possible sum of entry norms
            per_stage = np.linalg.norm(self.codebooks.astype(np.float64), axis=2).max(axis=1)
            hi = float(per_stage.sum() ** 2)
            self.norm_range = (0.0, hi if hi > 0 else 1.0)

    def _refresh_tables(self) -> None:
        cb = self.codebooks.astype(np.float64)
        self._cbnorm = np.einsum("mkd,mkd->mk", cb, cb)
        cross = np.empty((self.m, self.m, self.k, self.k), dtype=np.float64)
        for a in range(self.m):
            for b in range(self.m):
                cross[a, b] = cb[a] @ cb[b].T
        self._cross = cross

    # -- encoding --

    def _encode_greedy(self, x64: np.ndarray) -> np.ndarray:
        codes = np.empty((x64.shape[0], self.m), dtype=np.int64)
        residual = x64.copy()
        cb = self.codebooks.astype(np.float64)
        for mi in range(self.m):
            a, _ = _assign(residual, cb[mi], by_ip=False)
            codes[:, mi] = a
            residual -= cb[mi][a]
        return codes

    def _beam_encode(self, x64: np.ndarray, beam_size: int, use_lut: bool) -> np.ndarray:
        """Sequential beam search; ties broken toward the lexicographically
        smallest code. The LUT path replaces per-stage residual dot products
        with precomputed codebook tables; both paths pick identical codes."""
        n = x64.shape[0]
        cb = self.codebooks.astype(np.float64)
        cbnorm = self._cbnorm
        err = np.einsum("nd,nd->n", x64, x64)[:, None]  # (n, B)
        codes = np.zeros((n, 1, 0), dtype=np.int64)
        residual = None
        ip_x = None
        if use_lut:
            ip_x = np.einsum("nd,mkd->nmk", x64, cb)
        else:
            residual = x64[:, None, :].copy()  # (n, B, d)
        for mi in range(self.m):
            bsz = codes.shape[1]
            if use_lut:
                stage = cbnorm[mi][None, None, :] - 2.0 * ip_x[:, mi][:, None, :]
                cand = err[:, :, None] + stage
                for li in range(mi):
                    cr = self._cross[mi, li]  # (k, k): <T_mi[j], T_li[i]>
                    cand = cand + 2.0 * cr[:, codes[:, :, li]].transpose(1, 2, 0)
            else:
                ip_rb = np.einsum("nbd,kd->nbk", residual, cb[mi])
                cand = err[:, :, None] + cbnorm[mi][None, None, :] - 2.0 * ip_rb
            flat = cand.reshape(n, bsz * self.k)
            new_b = min(beam_size, flat.shape[1])
            # candidates are enumerated in lexicographic code order (beam rows
            # are kept lex-sorted), so a stable sort realizes the tie-break
            order = np.argsort(flat, axis=1, kind="stable")[:, :new_b]
            beam_idx = order // self.k
            j_idx = order % self.k
            err = np.take_along_axis(flat, order, axis=1)
            codes = np.concatenate(
                [np.take_along_axis(codes, beam_idx[:, :, None], axis=1),
                 j_idx[:, :, None]], axis=2)
            if not use_lut:
                residual = np.take_along_axis(residual, beam_idx[:, :, None], axis=1) \
                    - cb[mi][j_idx]
            if mi + 1 < self.m and new_b > 1:
                codes, err, residual = self._lex_sort_beam(codes, err, residual)
        return codes[:, 0, :]

    @staticmethod
    def _lex_sort_beam(codes, err, residual):
        n, b, m = codes.shape
        for i in range(n):
            perm = np.lexsort(codes[i, :, ::-1].T)  # first column is primary key
            if not np.array_equal(perm, np.arange(b)):
                codes[i] = codes[i, perm]
                err[i] = err[i, perm]
                if residual is not None:
                    residual[i] = residual[i, perm]
        return codes, err, residual

    def _icm(self, x64: np.ndarray, codes: np.ndarray, sweeps: int = 1
             ) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate-descent re-encoding; per-vector error never increases."""
        codes = codes.copy()
        n = x64.shape[0]
        cb = self.codebooks.astype(np.float64)
        ip_x = np.einsum("nd,mkd->nmk", x64, cb)
        for _ in range(sweeps):
            for mi in range(self.m):
                score = self._cbnorm[mi][None, :] - 2.0 * ip_x[:, mi]
                for li in range(self.m):
                    if li == mi:
                        continue
                    score = score + 2.0 * self._cross[mi, li][:, codes[:, li]].T
                codes[:, mi] = score.argmin(axis=1)
        rec = np.zeros_like(x64)
        for mi in range(self.m):
            rec += cb[mi][codes[:, mi]]
        diff = rec - x64
        return codes, np.einsum("nd,nd->n", diff, diff)

    def _encode_sub(self, x: np.ndarray, initial_codes: np.ndarray | None = None
                    ) -> np.ndarray:
        """Unpacked (n, m) sub-codes for the configured encoder variant."""
        self._check_trained()
        x64 = as_vectors(x, self.d).astype(np.float64)
        if self.variant == "rq":
            return self._beam_encode(x64, self.beam_size, self.use_beam_lut)
        return self._lsq_encode_sub(x64, initial_codes)

    def _lsq_encode_sub(self, x64: np.ndarray,
                        initial_codes: np.ndarray | None) -> np.ndarray:
        n = x64.shape[0]
        if initial_codes is None:
            codes = self._encode_greedy(x64)
        else:
            codes = np.asarray(initial_codes, dtype=np.int64).reshape(n, self.m).copy()
        best, best_err = self._icm(x64, codes, sweeps=2)
        rng = np.random.default_rng(self.seed + 0x5EED)
        for _ in range(self.ils_iters):
            cand = best.copy()
            pos = rng.integers(self.m, size=n)
            val = rng.integers(self.k, size=n)
            cand[np.arange(n), pos] = val
            cand, cand_err = self._icm(x64, cand, sweeps=2)
            better = cand_err < best_err
            best[better] = cand[better]
            best_err[better] = cand_err[better]
        return best

    def compute_codes(self, x: np.ndarray,
                      initial_codes: np.ndarray | None = None) -> np.ndarray:
        sub = self._encode_sub(x, initial_codes)
        packed = pack_codes(sub, self.nbits)
        if self.norm_bytes == 0:
            return packed
        rec = self.decode_raw(sub)
        norms = np.einsum("nd,nd->n", rec.astype(np.float64), rec.astype(np.float64))
        if self.norm_mode == "stored_f32":
            tail = norms.astype(np.float32).view(np.uint8).reshape(-1, 4)
        else:  # stored_q8
            lo, hi = self.norm_range
            lv = np.floor((norms - lo) / (hi - lo) * 256.0).astype(np.int64)
            tail = np.clip(lv, 0, 255).astype(np.uint8).reshape(-1, 1)
        return np.hstack([packed, tail])

    def decode_raw(self, sub: np.ndarray) -> np.ndarray:
        out = np.zeros((sub.shape[0], self.d), dtype=np.float32)
        for mi in range(self.m):
            out += self.codebooks[mi][sub[:, mi]]
        return out

    def unpack(self, codes: np.ndarray) -> np.ndarray:
        body = np.ascontiguousarray(codes[:, : self.code_size - self.norm_bytes])
        return unpack_codes(body, self.m, self.nbits).astype(np.int64)

    def decode(self, codes: np.ndarray) -> np.ndarray:
        self._check_trained()
        return self.decode_raw(self.unpack(codes))

    # -- compressed-domain distances --

    def ip_lookup_tables(self, q: np.ndarray) -> np.ndarray:
        """(m, k) table of <T_m[j], q>; summing over a code gives <q, decode>."""
        self._check_trained()
        q = np.asarray(q, dtype=np.float32).ravel()
        if q.shape[0] != self.d:
            raise ValueError("query dimension mismatch")
        return np.einsum("mkd,d->mk", self.codebooks, q)

    def stored_norms(self, codes: np.ndarray) -> np.ndarray:
        """Reconstruction norms carried in (or derivable from) the codes."""
        self._check_trained()
        if self.norm_mode == "stored_f32":
            return codes[:, -4:].copy().view(np.float32).ravel().astype(np.float64)
        if self.norm_mode == "stored_q8":
            lo, hi = self.norm_range
            lv = codes[:, -1].astype(np.float64)
            return lo + (lv + 0.5) * (hi - lo) / 256.0
        if self.norm_mode == "from_lut":
            sub = self.unpack(codes)
            norms = self._cbnorm[np.arange(self.m), sub].sum(axis=1)
            for a in range(self.m):
                for b in range(a):
                    norms = norms + 2.0 * self._cross[a, b][sub[:, a], sub[:, b]]
            return norms
        raise RuntimeError("norm_mode is 'none': reconstruction norms unavailable")

    def compressed_l2(self, q: np.ndarray, codes: np.ndarray) -> np.ndarray:
        """||q - decode(code)||^2 without decompressing, via the norm
        decomposition; requires a norm_mode other than 'none'."""
        lut = self.ip_lookup_tables(q).astype(np.float64)
        sub = self.unpack(codes)
        ip = lut[np.arange(self.m), sub].sum(axis=1)
        qn = float(np.dot(q.astype(np.float64).ravel(), q.astype(np.float64).ravel()))
        return qn + self.stored_norms(codes) - 2.0 * ip

    def compressed_ip(self, q: np.ndarray, codes: np.ndarray) -> np.ndarray:
        lut = self.ip_lookup_tables(q).astype(np.float64)
        sub = self.unpack(codes)
        return lut[np.arange(self.m), sub].sum(axis=1)


class ProductAdditiveCodec(Codec):
    """S independent additive codecs over d/S sub-vectors, codes concatenated."""

    def __init__(self, d: int, splits: int, m: int, nbits: int = 4,
                 variant: str = "rq", beam_size: int = 8, seed: int = 0, **kw):
        super().__init__(d)
        if d % splits != 0:
            raise ValueError(f"splits={splits} must divide d={d}")
        self.splits = splits
        self.m = m
        self.nbits = nbits
        self.dsub = d // splits
        self.groups = [AdditiveCodec(self.dsub, m, nbits, variant=variant,
                                     beam_size=beam_size, seed=seed + 31 * s, **kw)
                       for s in range(splits)]

    @property
    def k(self) -> int:
        return 1 << self.nbits

    @property
    def code_size(self) -> int:
        return sum(g.code_size for g in self.groups)

    def train(self, x: np.ndarray) -> None:
        x = as_vectors(x, self.d)
        for s, g in enumerate(self.groups):
            g.train(x[:, s * self.dsub:(s + 1) * self.dsub])
        self.is_trained = True

    @classmethod
    def from_product(cls, pq: ProductCodec) -> "ProductAdditiveCodec":
        """Hierarchy embedding: a product codec is a product-additive codec
        whose additive groups have a single level."""
        pa = cls(pq.d, pq.m, 1, pq.nbits)
        for s, g in enumerate(pa.groups):
            g.set_codebooks(pq.codebooks[s][None, :, :])
        pa.is_trained = True
        return pa

    def refine(self, x: np.ndarray, iters: int = 5) -> None:
        """EM refinement of every group from its current codebooks."""
        x = as_vectors(x, self.d)
        for s, g in enumerate(self.groups):
            g.train_from_codebooks(x[:, s * self.dsub:(s + 1) * self.dsub],
                                   g.codebooks, iters)
        self.is_trained = True

    def compute_codes(self, x: np.ndarray) -> np.ndarray:
        x = as_vectors(x, self.d)
        parts = [g.compute_codes(x[:, s * self.dsub:(s + 1) * self.dsub])
                 for s, g in enumerate(self.groups)]
        return np.hstack(parts)

    def decode(self, codes: np.ndarray) -> np.ndarray:
        out = np.empty((codes.shape[0], self.d), dtype=np.float32)
        off = 0
        for s, g in enumerate(self.groups):
            out[:, s * self.dsub:(s + 1) * self.dsub] = g.decode(
                np.ascontiguousarray(codes[:, off:off + g.code_size]))
            off += g.code_size
        return out


def additive_from_product_additive(pa: ProductAdditiveCodec, **kw) -> AdditiveCodec:
    """Hierarchy embedding: lift the group codebooks to full dimension with
    zeros outside each group's sub-vector."""
    m_total = pa.splits * pa.m
    aq = AdditiveCodec(pa.d, m_total, pa.nbits, **kw)
    cb = np.zeros((m_total, aq.k, pa.d), dtype=np.float32)
    idx = 0
    for s, g in enumerate(pa.groups):
        for mi in range(g.m):
            cb[idx, :, s * pa.dsub:(s + 1) * pa.dsub] = g.codebooks[mi]
            idx += 1
    aq.set_codebooks(cb)
    return aq


def adc_lookup_tables(codec: Codec, q: np.ndarray) -> np.ndarray:
    """Inner-product lookup tables for codecs that support them."""
    if isinstance(codec, (ProductCodec, AdditiveCodec)):
        return codec.ip_lookup_tables(q)
    raise TypeError(f"{type(codec).__name__} has no compressed-domain IP tables")


def rq_encode(codec: AdditiveCodec, x: np.ndarray) -> np.ndarray:
    """Residual beam-search encoding (codec must be the 'rq' variant)."""
    if codec.variant != "rq":
        raise ValueError("rq_encode requires an 'rq' variant codec")
    return codec.compute_codes(x)


def lsq_encode(codec: AdditiveCodec, x: np.ndarray,
               initial_codes: np.ndarray | None = None) -> np.ndarray:
    """Local-search encoding: ICM sweeps plus seeded random restarts."""
    if codec.variant != "lsq":
        raise ValueError("lsq_encode requires an 'lsq' variant codec")
    return codec.compute_codes(x, initial_codes=initial_codes)
