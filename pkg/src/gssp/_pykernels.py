"""Pure-Python/numpy implementations of the hot kernels.

These are the fallback for :mod:`gssp._ckernels` and define the reference
semantics the compiled versions must reproduce exactly.
"""
from collections import deque

import numpy as np


def expand_clusters(indptr, indices, is_core):
    """Breadth-first density expansion over a CSR neighbour graph.

    Clusters are seeded at unlabelled core points in ascending index order;
    neighbours are visited in the order stored in ``indices``. A non-core
    point joins the first cluster that reaches it. Returns labels with -1
    for noise, cluster ids numbered in creation order.
    """
    n = len(indptr) - 1
    labels = np.full(n, -1, dtype=np.int64)
    indptr = indptr.tolist()
    indices = indices.tolist()
    core = is_core.astype(bool).tolist()
    out = labels.tolist()
    cluster = 0
    for seed in range(n):
        if not core[seed] or out[seed] != -1:
            continue
        out[seed] = cluster
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for j in indices[indptr[p]:indptr[p + 1]]:
                if out[j] == -1:
                    out[j] = cluster
                    if core[j]:
                        queue.append(j)
        cluster += 1
    return np.asarray(out, dtype=np.int64)


def _spread_bits(v):
    v = v.astype(np.uint64) & np.uint64(0xFFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x0C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x249249249249)
    return v


def morton_codes(q):
    """Interleave three 16-bit coordinates (x in the lowest bit) into 48-bit codes."""
    q = np.asarray(q)
    return _spread_bits(q[:, 0]) | (_spread_bits(q[:, 1]) << np.uint64(1)) | \
        (_spread_bits(q[:, 2]) << np.uint64(2))


def encode_varints(values):
    """Zig-zag + LEB128 encoding of an int64 array."""
    v = np.asarray(values, dtype=np.int64)
    if v.size == 0:
        return b""
    u = (v.astype(np.uint64) << np.uint64(1)) ^ (v >> np.int64(63)).astype(np.uint64)
    nbytes = np.ones(len(u), dtype=np.int64)
    t = u >> np.uint64(7)
    while t.any():
        nz = t != 0
        nbytes += nz
        t = t >> np.uint64(7)
    starts = np.concatenate(([0], np.cumsum(nbytes)[:-1]))
    out = np.empty(int(nbytes.sum()), dtype=np.uint8)
    for k in range(int(nbytes.max())):
        sel = nbytes > k
        chunk = (u[sel] >> np.uint64(7 * k)) & np.uint64(0x7F)
        cont = (nbytes[sel] > k + 1).astype(np.uint64) << np.uint64(7)
        out[starts[sel] + k] = (chunk | cont).astype(np.uint8)
    return out.tobytes()


def decode_varints(buf, offset, count):
    """Inverse of :func:`encode_varints`; returns ``(values, new_offset)``.

    Raises ValueError on truncated input or over-long encodings.
    """
    if count == 0:
        return np.zeros(0, dtype=np.int64), offset
    raw = np.frombuffer(buf, dtype=np.uint8, offset=offset)
    ends = np.flatnonzero(raw < 0x80)
    if len(ends) < count:
        raise ValueError(f"varint stream truncated at offset {offset + len(raw)}")
    ends = ends[:count]
    starts = np.concatenate(([0], ends[:-1] + 1))
    lengths = ends - starts + 1
    if lengths.max() > 10:
        bad = int(starts[np.argmax(lengths > 10)])
        raise ValueError(f"over-long varint at offset {offset + bad}")
    u = np.zeros(count, dtype=np.uint64)
    for k in range(int(lengths.max())):
        sel = lengths > k
        u[sel] |= (raw[starts[sel] + k].astype(np.uint64) & np.uint64(0x7F)) << np.uint64(7 * k)
    v = (u >> np.uint64(1)).astype(np.int64) ^ -(u & np.uint64(1)).astype(np.int64)
    return v, offset + int(ends[-1]) + 1


def nearest_sorted(values, codebook):
    """Index of the nearest entry of an ascending codebook; ties go to the lower index."""
    values = np.asarray(values, dtype=np.float64)
    cb = np.asarray(codebook, dtype=np.float64)
    hi = np.clip(np.searchsorted(cb, values, side="left"), 0, len(cb) - 1)
    lo = np.clip(hi - 1, 0, len(cb) - 1)
    take_lo = np.abs(values - cb[lo]) <= np.abs(values - cb[hi])
    return np.where(take_lo, lo, hi).astype(np.int64)
