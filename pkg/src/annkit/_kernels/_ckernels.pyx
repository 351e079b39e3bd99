# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled distance kernels.

Same signatures as the numpy fallback in ``_pykernels``; the dispatcher in
``annkit._kernels`` picks whichever is available. Compiled with -ffast-math,
so NaN detection is done on the raw float bits (see ``bits_isnan``).
"""

from libc.math cimport fabsf, fmaxf, fminf, logf, powf
from libc.string cimport memcpy
from libc.stdint cimport uint8_t, uint32_t, uint64_t, int32_t

import numpy as np
cimport numpy as cnp

cnp.import_array()

# Metric codes shared with the fallback (see annkit._kernels.METRIC_CODES).
DEF M_IP = 0
DEF M_L2 = 1
DEF M_L1 = 2
DEF M_LINF = 3
DEF M_LP = 4
DEF M_CANBERRA = 5
DEF M_BRAYCURTIS = 6
DEF M_JENSENSHANNON = 7
DEF M_JACCARD = 8
DEF M_NANEUCLIDEAN = 9

COMPILED = True

cdef float NAN_F = <float> (float("nan"))


cdef inline int bits_isnan(float x) nogil:
    # -ffast-math removes ordinary isnan(); inspect the IEEE-754 bits instead.
    cdef uint32_t u
    memcpy(&u, &x, 4)
    return ((u >> 23) & 0xFF) == 0xFF and (u & 0x7FFFFF) != 0


cdef inline float dist_one(const float* x, const float* y, Py_ssize_t d,
                           int kind, float arg) nogil:
    cdef Py_ssize_t j
    cdef float acc = 0.0, den = 0.0, diff, s
    cdef float worst = 0.0
    cdef Py_ssize_t nvalid = 0
    cdef int p_int
    if kind == M_IP:
        for j in range(d):
            acc += x[j] * y[j]
        return acc
    elif kind == M_L2:
        for j in range(d):
            diff = x[j] - y[j]
            acc += diff * diff
        return acc
    elif kind == M_L1:
        for j in range(d):
            acc += fabsf(x[j] - y[j])
        return acc
    elif kind == M_LINF:
        for j in range(d):
            diff = fabsf(x[j] - y[j])
            if diff > worst:
                worst = diff
        return worst
    elif kind == M_LP:
        p_int = <int> arg
        if arg == <float> p_int and 1 <= p_int <= 4:
            for j in range(d):
                diff = fabsf(x[j] - y[j])
                s = diff
                if p_int >= 2:
                    s *= diff
                if p_int >= 3:
                    s *= diff
                if p_int >= 4:
                    s *= diff
                acc += s
        else:
            for j in range(d):
                acc += powf(fabsf(x[j] - y[j]), arg)
        return acc
    elif kind == M_CANBERRA:
        for j in range(d):
            den = fabsf(x[j]) + fabsf(y[j])
            if den > 0:
                acc += fabsf(x[j] - y[j]) / den
        return acc
    elif kind == M_BRAYCURTIS:
        for j in range(d):
            acc += fabsf(x[j] - y[j])
            den += fabsf(x[j] + y[j])
        if den == 0:
            return 0.0
        return acc / den
    elif kind == M_JENSENSHANNON:
        # 0.5*(KL(x||m)+KL(y||m)) = 0.5*(sum x log x + sum y log y - sum s log(s/2))
        for j in range(d):
            if x[j] > 0:
                acc += x[j] * logf(x[j])
            if y[j] > 0:
                acc += y[j] * logf(y[j])
            s = x[j] + y[j]
            if s > 0:
                acc -= s * logf(0.5 * s)
        return 0.5 * acc
    elif kind == M_JACCARD:
        for j in range(d):
            acc += fminf(x[j], y[j])
            den += fmaxf(x[j], y[j])
        if den == 0:
            return 0.0
        return acc / den
    else:  # M_NANEUCLIDEAN
        for j in range(d):
            if not bits_isnan(x[j]) and not bits_isnan(y[j]):
                diff = x[j] - y[j]
                acc += diff * diff
                nvalid += 1
        if nvalid == 0:
            return NAN_F
        return (<float> nvalid / <float> d) * acc


def pairwise(cnp.ndarray[cnp.float32_t, ndim=2, mode="c"] q not None,
             cnp.ndarray[cnp.float32_t, ndim=2, mode="c"] x not None,
             int kind, float arg):
    """Distance matrix (nq, nx) between row sets q and x for one metric."""
    cdef Py_ssize_t nq = q.shape[0], nx = x.shape[0], d = q.shape[1]
    if x.shape[1] != d:
        raise ValueError(f"dimension mismatch: {q.shape[1]} vs {x.shape[1]}")
    cdef cnp.ndarray[cnp.float32_t, ndim=2, mode="c"] out = \
        np.empty((nq, nx), dtype=np.float32)
    cdef const float* qp = <const float*> q.data
    cdef const float* xp = <const float*> x.data
    cdef float* op = <float*> out.data
    cdef Py_ssize_t i, j, s_idx
    cdef float qlq, acc, s
    cdef const float* qi
    cdef const float* xj
    # xlogx cache lifts the log(db) work out of the query loop
    cdef cnp.ndarray[cnp.float32_t, ndim=1] xlx
    cdef float* xlxp = NULL
    if kind == M_JENSENSHANNON:
        xlx = np.empty(nx, dtype=np.float32)
        xlxp = <float*> xlx.data
        with nogil:
            for j in range(nx):
                xj = xp + j * d
                acc = 0.0
                for i in range(d):
                    if xj[i] > 0:
                        acc += xj[i] * logf(xj[i])
                xlxp[j] = acc
        with nogil:
            for i in range(nq):
                qi = qp + i * d
                qlq = 0.0
                for j in range(d):
                    if qi[j] > 0:
                        qlq += qi[j] * logf(qi[j])
                for j in range(nx):
                    xj = xp + j * d
                    acc = qlq + xlxp[j]
                    for s_idx in range(d):
                        s = qi[s_idx] + xj[s_idx]
                        if s > 0:
                            acc -= s * logf(0.5 * s)
                    op[i * nx + j] = 0.5 * acc
        return out
    with nogil:
        for i in range(nq):
            qi = qp + i * d
            for j in range(nx):
                op[i * nx + j] = dist_one(qi, xp + j * d, d, kind, arg)
    return out


def dist_single(cnp.ndarray[cnp.float32_t, ndim=1, mode="c"] x not None,
                cnp.ndarray[cnp.float32_t, ndim=1, mode="c"] y not None,
                int kind, float arg):
    """Distance between two single vectors."""
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return dist_one(<const float*> x.data, <const float*> y.data,
                    x.shape[0], kind, arg)


def hamming_matrix(cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] a not None,
                   cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] b not None):
    """Hamming distance matrix (na, nb) over packed binary codes."""
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], nbytes = a.shape[1]
    if b.shape[1] != nbytes:
        raise ValueError("code size mismatch")
    cdef cnp.ndarray[cnp.int32_t, ndim=2, mode="c"] out = \
        np.empty((na, nb), dtype=np.int32)
    cdef const uint8_t* ap = <const uint8_t*> a.data
    cdef const uint8_t* bp = <const uint8_t*> b.data
    cdef int32_t* op = <int32_t*> out.data
    cdef Py_ssize_t i, j, w, nwords = nbytes // 8, tail = nbytes % 8
    cdef uint64_t ua, ub
    cdef int32_t acc
    cdef const uint8_t* ra
    cdef const uint8_t* rb
    with nogil:
        for i in range(na):
            ra = ap + i * nbytes
            for j in range(nb):
                rb = bp + j * nbytes
                acc = 0
                for w in range(nwords):
                    memcpy(&ua, ra + 8 * w, 8)
                    memcpy(&ub, rb + 8 * w, 8)
                    acc += popcount64(ua ^ ub)
                for w in range(8 * nwords, 8 * nwords + tail):
                    acc += popcount8(ra[w] ^ rb[w])
                op[i * nb + j] = acc
    return out


cdef extern from *:
    """
    static inline int popcount64_impl(unsigned long long v)
    { return __builtin_popcountll(v); }
    static inline int popcount8_impl(unsigned char v)
    { return __builtin_popcount((unsigned int)v); }
    """
    int popcount64_impl(uint64_t v) nogil
    int popcount8_impl(uint8_t v) nogil


cdef inline int popcount64(uint64_t v) nogil:
    return popcount64_impl(v)


cdef inline int popcount8(uint8_t v) nogil:
    return popcount8_impl(v)


cdef inline uint32_t read_bits(const uint8_t* row, Py_ssize_t code_size,
                               Py_ssize_t start, int nbits) nogil:
    # Bit window [start, start+nbits) of an LSB-first bitstream, nbits <= 16.
    cdef Py_ssize_t byte0 = start >> 3
    cdef int off = <int> (start & 7)
    cdef uint32_t window = row[byte0]
    if byte0 + 1 < code_size:
        window |= (<uint32_t> row[byte0 + 1]) << 8
    if byte0 + 2 < code_size:
        window |= (<uint32_t> row[byte0 + 2]) << 16
    return (window >> off) & ((1 << nbits) - 1)


def unpack_codes(cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] codes not None,
                 int m, int nbits):
    """Unpack (n, code_size) packed rows into (n, m) int32 sub-codes."""
    cdef Py_ssize_t n = codes.shape[0], code_size = codes.shape[1]
    cdef cnp.ndarray[cnp.int32_t, ndim=2, mode="c"] out = \
        np.empty((n, m), dtype=np.int32)
    cdef const uint8_t* cp = <const uint8_t*> codes.data
    cdef int32_t* op = <int32_t*> out.data
    cdef Py_ssize_t i, k
    with nogil:
        for i in range(n):
            for k in range(m):
                op[i * m + k] = <int32_t> read_bits(
                    cp + i * code_size, code_size, k * nbits, nbits)
    return out


def lut_sum_packed(cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] codes not None,
                   int m, int nbits,
                   cnp.ndarray[cnp.float32_t, ndim=2, mode="c"] lut not None):
    """Per row: sum over sub-quantizers of lut[j, code_j]. Returns (n,) f32."""
    cdef Py_ssize_t n = codes.shape[0], code_size = codes.shape[1]
    cdef Py_ssize_t k_cap = lut.shape[1]
    if lut.shape[0] != m:
        raise ValueError("lut rows != m")
    cdef cnp.ndarray[cnp.float32_t, ndim=1, mode="c"] out = \
        np.empty(n, dtype=np.float32)
    cdef const uint8_t* cp = <const uint8_t*> codes.data
    cdef const float* lp = <const float*> lut.data
    cdef float* op = <float*> out.data
    cdef Py_ssize_t i, k
    cdef float acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(m):
                acc += lp[k * k_cap + read_bits(
                    cp + i * code_size, code_size, k * nbits, nbits)]
            op[i] = acc
    return out
