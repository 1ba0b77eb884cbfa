# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics mirror gssp._pykernels exactly."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t, uint8_t
from libc.math cimport fabs

cnp.import_array()


def expand_clusters(const int64_t[::1] indptr, const int64_t[::1] indices, is_core):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef const uint8_t[::1] core = np.ascontiguousarray(is_core, dtype=np.uint8)
    labels_arr = np.full(n, -1, dtype=np.int64)
    cdef int64_t[::1] labels = labels_arr
    queue_arr = np.empty(max(n, 1), dtype=np.int64)
    cdef int64_t[::1] queue = queue_arr
    cdef Py_ssize_t seed, head, tail, k
    cdef int64_t p, j, cluster = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        labels[seed] = cluster
        head = 0
        tail = 0
        queue[tail] = seed
        tail += 1
        while head < tail:
            p = queue[head]
            head += 1
            for k in range(indptr[p], indptr[p + 1]):
                j = indices[k]
                if labels[j] == -1:
                    labels[j] = cluster
                    if core[j]:
                        queue[tail] = j
                        tail += 1
        cluster += 1
    return labels_arr


cdef inline uint64_t _spread(uint64_t v) nogil:
    v &= <uint64_t>0xFFFF
    v = (v | (v << 16)) & <uint64_t>0x0000FF0000FF
    v = (v | (v << 8)) & <uint64_t>0x00F00F00F00F
    v = (v | (v << 4)) & <uint64_t>0x0C30C30C30C3
    v = (v | (v << 2)) & <uint64_t>0x249249249249
    return v


def morton_codes(q):
    cdef const int64_t[:, ::1] qq = np.ascontiguousarray(q, dtype=np.int64)
    cdef Py_ssize_t n = qq.shape[0], i
    out_arr = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] out = out_arr
    with nogil:
        for i in range(n):
            out[i] = _spread(<uint64_t>qq[i, 0]) | (_spread(<uint64_t>qq[i, 1]) << 1) | \
                (_spread(<uint64_t>qq[i, 2]) << 2)
    return out_arr


def encode_varints(values):
    cdef const int64_t[::1] v = np.ascontiguousarray(values, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0], i, pos = 0
    if n == 0:
        return b""
    out_arr = np.empty(n * 10, dtype=np.uint8)
    cdef uint8_t[::1] out = out_arr
    cdef uint64_t u
    with nogil:
        for i in range(n):
            u = (<uint64_t>v[i] << 1) ^ <uint64_t>(v[i] >> 63)
            while u >= 0x80:
                out[pos] = <uint8_t>((u & 0x7F) | 0x80)
                pos += 1
                u >>= 7
            out[pos] = <uint8_t>u
            pos += 1
    return out_arr[:pos].tobytes()


def decode_varints(buf, Py_ssize_t offset, Py_ssize_t count):
    cdef const uint8_t[::1] raw = np.frombuffer(buf, dtype=np.uint8)
    cdef Py_ssize_t n = raw.shape[0], i, pos = offset, start
    out_arr = np.empty(count, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef uint64_t u, b
    cdef int shift
    for i in range(count):
        u = 0
        shift = 0
        start = pos
        while True:
            if pos >= n:
                raise ValueError(f"varint stream truncated at offset {pos}")
            if shift >= 70:
                raise ValueError(f"over-long varint at offset {start}")
            b = raw[pos]
            pos += 1
            u |= (b & 0x7F) << shift
            shift += 7
            if b < 0x80:
                break
        out[i] = <int64_t>(u >> 1) ^ -(<int64_t>(u & 1))
    return out_arr, pos


def nearest_sorted(values, codebook):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef const double[::1] cb = np.ascontiguousarray(codebook, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], m = cb.shape[0], i, lo, hi, mid
    out_arr = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef double x
    with nogil:
        for i in range(n):
            x = v[i]
            lo = 0
            hi = m
            while lo < hi:  # first index with cb[idx] >= x
                mid = (lo + hi) >> 1
                if cb[mid] < x:
                    lo = mid + 1
                else:
                    hi = mid
            if lo >= m:
                lo = m - 1
            hi = lo
            if lo > 0:
                lo -= 1
            if fabs(x - cb[lo]) <= fabs(x - cb[hi]):
                out[i] = lo
            else:
                out[i] = hi
    return out_arr
