# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: stream hashing, weight sampling, cascade refinement.

Same contracts and stream layout as ``_pykernels``; loops release the GIL.
Partition sums stay in numpy, whose vectorized exp beats a scalar libm loop.
"""

import numpy as np

from cascadelab._pykernels import coarsen_rows, partition_sums
from libc.math cimport log, exp, sqrt, cos, pow
from libc.stdint cimport uint64_t, int64_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t SLOT_STEP = 0xD1B54A32D192ED03ULL
cdef uint64_t LEVEL_STEP = 0x94D049BB133111EBULL
cdef uint64_t CELL_STEP = 0xD6E8FEB86659FD93ULL
cdef double TWO_PI = 6.283185307179586
cdef double UNIT = 2.220446049250313e-16

cdef enum:
    DETERMINISTIC = 0
    DISCRETE = 1
    LOGNORMAL = 2
    DIRICHLET = 4
    ONE_HOT = 5


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double unit(uint64_t key, uint64_t t) noexcept nogil:
    return (<double>(mix64(key + (t + 1) * GOLDEN) >> 12) + 0.5) * UNIT


cdef inline double normal(uint64_t key, uint64_t t) noexcept nogil:
    cdef double u0 = unit(key, t)
    cdef double u1 = unit(key, t + 1)
    return sqrt(-2.0 * log(u0)) * cos(TWO_PI * u1)


cdef double gamma_draw(uint64_t key, double a) noexcept nogil:
    cdef uint64_t t = 0
    cdef double boost = 1.0, shape = a, d, cc, x, v, u2
    if a < 1.0:
        boost = unit(key, 0)
        t = 1
        shape = a + 1.0
    d = shape - 1.0 / 3.0
    cc = 1.0 / sqrt(9.0 * d)
    while True:
        x = normal(key, t)
        u2 = unit(key, t + 2)
        t += 3
        v = 1.0 + cc * x
        if v <= 0.0:
            continue
        v = v * v * v
        if log(u2) < 0.5 * x * x + d - d * v + d * log(v):
            break
    if a < 1.0:
        return d * v * pow(boost, 1.0 / a)
    return d * v


def mix_offsets(keys, Py_ssize_t n, step):
    """out[r, a] = mix64(keys[r] + (a + 1) * step) for a < n."""
    cdef const uint64_t[::1] k = np.ascontiguousarray(keys, dtype=np.uint64)
    cdef uint64_t st = <uint64_t>step
    out = np.empty((k.shape[0], n), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    cdef Py_ssize_t r, a
    with nogil:
        for r in range(k.shape[0]):
            for a in range(n):
                o[r, a] = mix64(k[r] + <uint64_t>(a + 1) * st)
    return out


cdef inline void fill_weights(uint64_t ck, int code, int c, const double[::1] p,
                              Py_ssize_t m, double sigma2, double* w) noexcept nogil:
    cdef Py_ssize_t i, idx
    cdef uint64_t sk
    cdef double u, s, total
    if code == DETERMINISTIC:
        for i in range(c):
            w[i] = 1.0 / c
    elif code == ONE_HOT:
        u = unit(mix64(ck + SLOT_STEP), 0)
        idx = <Py_ssize_t>(u * c)
        if idx > c - 1:
            idx = c - 1
        for i in range(c):
            w[i] = 0.0
        w[idx] = 1.0
    elif code == DISCRETE:
        for i in range(c):
            sk = mix64(ck + <uint64_t>(i + 1) * SLOT_STEP)
            u = unit(sk, 0)
            idx = 0
            while idx < m - 1 and p[1 + m + idx] <= u:
                idx += 1
            w[i] = p[1 + idx] / c
    elif code == LOGNORMAL:
        s = sqrt(sigma2)
        for i in range(c):
            sk = mix64(ck + <uint64_t>(i + 1) * SLOT_STEP)
            w[i] = exp(s * normal(sk, 0) - 0.5 * sigma2) / c
    else:
        for i in range(c):
            sk = mix64(ck + <uint64_t>(i + 1) * SLOT_STEP)
            w[i] = gamma_draw(sk, p[i])
        total = w[0]
        for i in range(1, c):
            total = total + w[i]
        for i in range(c):
            w[i] = w[i] / total


cdef tuple _unpack(int code, const double[::1] p):
    if code not in (DETERMINISTIC, DISCRETE, LOGNORMAL, DIRICHLET, ONE_HOT):
        raise ValueError(f"unknown family code {code}")
    if code == DISCRETE:
        return <Py_ssize_t>p[0], 0.0
    if code == LOGNORMAL:
        return 0, p[0]
    return 0, 0.0


def sample_family(keys, int code, int c, params):
    """Weight vectors for each cell key; returns an (N, c) float array."""
    cdef const uint64_t[::1] k = np.ascontiguousarray(keys, dtype=np.uint64)
    cdef const double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef Py_ssize_t m
    cdef double sigma2
    m, sigma2 = _unpack(code, p)
    cdef Py_ssize_t n = k.shape[0], r
    out = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for r in range(n):
            fill_weights(k[r], code, c, p, m, sigma2, &o[r, 0])
    return out


def cascade_rows(replicate_keys, int n, int code, int c, params):
    """Level-n cascade masses for each replicate key; shape (R, c^n).

    Cells are refined in place from the last parent backwards, so each row
    needs no scratch beyond one weight vector.
    """
    cdef const uint64_t[::1] rk = np.ascontiguousarray(replicate_keys, dtype=np.uint64)
    cdef const double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef Py_ssize_t m
    cdef double sigma2
    m, sigma2 = _unpack(code, p)
    cdef Py_ssize_t rows = rk.shape[0], width = c ** n
    out = np.empty((rows, width), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] w = np.empty(c, dtype=np.float64)
    cdef Py_ssize_t r, j, a, i, cells
    cdef uint64_t lk, ck
    cdef double parent
    with nogil:
        for r in range(rows):
            o[r, 0] = 1.0
            cells = 1
            for j in range(n):
                lk = mix64(rk[r] + <uint64_t>(j + 1) * LEVEL_STEP)
                for a in range(cells - 1, -1, -1):
                    ck = mix64(lk + <uint64_t>(a + 1) * CELL_STEP)
                    fill_weights(ck, code, c, p, m, sigma2, &w[0])
                    parent = o[r, a]
                    for i in range(c):
                        o[r, a * c + i] = parent * w[i]
                cells = cells * c
    return out
