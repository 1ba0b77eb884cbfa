"""Independent brute-force references used by the tests.

Nothing here calls into the package's numeric code paths; each oracle is a
slow, direct restatement of the rule it checks.
"""
import itertools
import math
import struct

import numpy as np
from scipy.spatial.transform import Rotation


# -- splat geometry -------------------------------------------------------------

def principal_direction_oracle(log_scale, rot):
    """Rotation column of the largest scale via scipy; first nonzero component positive."""
    w, x, y, z = (float(v) for v in rot)
    R = Rotation.from_quat([x, y, z, w]).as_matrix()
    s = [math.exp(float(v)) for v in log_scale]
    axis = max(range(3), key=lambda k: (s[k], -k))
    d = R[:, axis]
    for c in d:
        if abs(c) > 1e-9:
            return d if c > 0 else -d
    return d


def predicate_oracle(P, D, C, eps_s, eps_d, eps_c):
    """Dense boolean neighbour matrix of the conjunctive predicate (diagonal False)."""
    n = len(P)
    A = np.zeros((n, n), dtype=bool)
    for i in range(n):
        ds = np.sqrt(((P - P[i]) ** 2).sum(axis=1))
        cos = np.clip(D @ D[i], -1, 1)
        dd = 1 - (cos + 1) / 2
        dc = np.sqrt(((C - C[i]) ** 2).sum(axis=1))
        A[i] = (ds <= eps_s) & (dd <= eps_d) & (dc <= eps_c)
        A[i, i] = False
    return A


def dbscan_oracle(adj, min_samples):
    """Textbook DBSCAN on a dense adjacency; returns a set of frozensets (clusters)."""
    n = len(adj)
    nbrs = [list(np.flatnonzero(adj[i])) for i in range(n)]
    core = [len(nb) >= min_samples for nb in nbrs]
    label = [None] * n
    clusters = []
    for s in range(n):
        if not core[s] or label[s] is not None:
            continue
        cid = len(clusters)
        members = {s}
        label[s] = cid
        frontier = [s]
        while frontier:
            nxt = []
            for p in frontier:
                for q in nbrs[p]:
                    if label[q] is None:
                        label[q] = cid
                        members.add(q)
                        if core[q]:
                            nxt.append(q)
            frontier = nxt
        clusters.append(frozenset(members))
    return set(clusters)


# -- polynomials ----------------------------------------------------------------

def exponents_oracle(d):
    """Graded-lex exponents built by sorting all triples."""
    trip = [e for e in itertools.product(range(d + 1), repeat=3) if sum(e) <= d]
    return sorted(trip, key=lambda e: (sum(e), -e[0], -e[1], -e[2]))


def features_oracle(X, d):
    ex = exponents_oracle(d)
    return np.array([[x ** a * y ** b * z ** c for a, b, c in ex] for x, y, z in X])


# -- numbers --------------------------------------------------------------------

def half_round_oracle(v):
    """binary16 value of ``v`` rounded from binary32, saturating at +-65504."""
    f = float(np.float32(v))
    if abs(f) > 65504:
        # Values that round to the largest finite half still do; the rest saturate too.
        return math.copysign(65504.0, f)
    try:
        return struct.unpack("<e", struct.pack("<e", f))[0]
    except OverflowError:
        return math.copysign(65504.0, f)


def morton_oracle(x, y, z):
    code = 0
    for b in range(16):
        code |= ((x >> b) & 1) << (3 * b)
        code |= ((y >> b) & 1) << (3 * b + 1)
        code |= ((z >> b) & 1) << (3 * b + 2)
    return code


def varint_oracle(values):
    out = bytearray()
    for v in values:
        u = (v << 1) ^ (v >> 63)
        u &= (1 << 64) - 1
        while True:
            b = u & 0x7F
            u >>= 7
            if u:
                out.append(b | 0x80)
            else:
                out.append(b)
                break
    return bytes(out)


def nearest_oracle(v, codebook):
    best, arg = None, None
    for j, c in enumerate(codebook):
        d = abs(v - c)
        if best is None or d < best:
            best, arg = d, j
    return arg


def kmeans_split_count_oracle(ratio):
    return int(min(4, max(2, math.ceil(ratio) + 1)))
