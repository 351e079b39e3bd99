"""Pure-numpy fallback for the compiled kernels.

Every public function mirrors a function in ``_ckernels`` (same name, same
arguments, same output dtype). Used when the extension is not built or when
ANNKIT_PURE_PYTHON=1 is set.
"""

from __future__ import annotations

import numpy as np

COMPILED = False

M_IP = 0
M_L2 = 1
M_L1 = 2
M_LINF = 3
M_LP = 4
M_CANBERRA = 5
M_BRAYCURTIS = 6
M_JENSENSHANNON = 7
M_JACCARD = 8
M_NANEUCLIDEAN = 9


def _xlogx_rows(x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape, dtype=np.float32)
    np.multiply(x, np.log(x, where=x > 0, out=np.zeros_like(x)), where=x > 0, out=out)
    return out.sum(axis=1)


def _one_query(q: np.ndarray, x: np.ndarray, kind: int, arg: float,
               xlx: np.ndarray | None) -> np.ndarray:
    if kind == M_L2:
        diff = x - q
        return np.einsum("nd,nd->n", diff, diff)
    if kind == M_L1:
        return np.abs(x - q).sum(axis=1)
    if kind == M_LINF:
        return np.abs(x - q).max(axis=1)
    if kind == M_LP:
        p = float(arg)
        ad = np.abs(x - q)
        if p == int(p) and 1 <= int(p) <= 4:
            return (ad ** int(p)).sum(axis=1)
        return (ad ** np.float32(p)).sum(axis=1)
    if kind == M_CANBERRA:
        num = np.abs(x - q)
        den = np.abs(x) + np.abs(q)
        return np.divide(num, den, where=den > 0, out=np.zeros_like(num)).sum(axis=1)
    if kind == M_BRAYCURTIS:
        num = np.abs(x - q).sum(axis=1)
        den = np.abs(x + q).sum(axis=1)
        return np.divide(num, den, where=den > 0, out=np.zeros_like(num))
    if kind == M_JENSENSHANNON:
        qlq = _xlogx_rows(q[None, :])[0]
        s = x + q
        slogs = np.multiply(
            s, np.log(np.multiply(s, 0.5, where=s > 0, out=np.zeros_like(s)),
                      where=s > 0, out=np.zeros_like(s)),
            where=s > 0, out=np.zeros_like(s))
        return 0.5 * (qlq + xlx - slogs.sum(axis=1))
    if kind == M_JACCARD:
        num = np.minimum(x, q).sum(axis=1)
        den = np.maximum(x, q).sum(axis=1)
        return np.divide(num, den, where=den > 0, out=np.zeros_like(num))
    if kind == M_NANEUCLIDEAN:
        valid = ~(np.isnan(x) | np.isnan(q))
        diff = np.where(valid, x - q, 0.0)
        nvalid = valid.sum(axis=1)
        res = np.einsum("nd,nd->n", diff, diff) * (nvalid / x.shape[1])
        res[nvalid == 0] = np.nan
        return res
    raise ValueError(f"unknown metric code {kind}")


def pairwise(q: np.ndarray, x: np.ndarray, kind: int, arg: float) -> np.ndarray:
    """Distance matrix (nq, nx) between row sets q and x for one metric."""
    if q.shape[1] != x.shape[1]:
        raise ValueError(f"dimension mismatch: {q.shape[1]} vs {x.shape[1]}")
    if kind == M_IP:
        return (q @ x.T).astype(np.float32, copy=False)
    xlx = _xlogx_rows(x) if kind == M_JENSENSHANNON else None
    out = np.empty((q.shape[0], x.shape[0]), dtype=np.float32)
    for i in range(q.shape[0]):
        out[i] = _one_query(q[i], x, kind, arg, xlx)
    return out


def dist_single(x: np.ndarray, y: np.ndarray, kind: int, arg: float) -> float:
    """Distance between two single vectors."""
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(pairwise(x[None, :], y[None, :], kind, arg)[0, 0])


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamming distance matrix (na, nb) over packed binary codes."""
    if a.shape[1] != b.shape[1]:
        raise ValueError("code size mismatch")
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.int32)
    for i in range(a.shape[0]):
        out[i] = np.bitwise_count(np.bitwise_xor(a[i], b)).sum(axis=1, dtype=np.int32)
    return out


def unpack_codes(codes: np.ndarray, m: int, nbits: int) -> np.ndarray:
    """Unpack (n, code_size) packed rows into (n, m) int32 sub-codes."""
    bits = np.unpackbits(codes, axis=1, bitorder="little")[:, : m * nbits]
    weights = (1 << np.arange(nbits, dtype=np.int32))
    return (bits.reshape(codes.shape[0], m, nbits) * weights).sum(axis=2, dtype=np.int32)


def lut_sum_packed(codes: np.ndarray, m: int, nbits: int, lut: np.ndarray) -> np.ndarray:
    """Per row: sum over sub-quantizers of lut[j, code_j]. Returns (n,) f32."""
    sub = unpack_codes(codes, m, nbits)
    return lut[np.arange(m), sub].sum(axis=1, dtype=np.float32)
