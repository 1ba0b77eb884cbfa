"""Sketch section: half-precision polynomial models plus compressed positions.

Positions are quantised on a 16-bit grid spanning the scene bounding box,
Morton-sorted inside each cluster, delta coded as zig-zag varints (one plane
per axis) and deflated. Attributes are not stored at all; they are
re-evaluated from the cluster models at the decoded positions.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import FormatError
from .halffloat import from_half, to_half
from .polyfit import (ATTRIBUTE_DIMS, ATTRIBUTE_KINDS, PolyModel, polynomial_feature_count,
                      predict_attributes)
from .splat_model import N_SH_REST, Scene, logit

GRID_BITS = 16
GRID_CELLS = 1 << GRID_BITS
DEGENERATE_EXTENT = 1e-9
ZLIB_LEVEL = 9

_U32 = struct.Struct("<I")
_CLUSTER_HEAD = struct.Struct("<I6H4B")
_BBOX = struct.Struct("<6d")


@dataclass
class SketchCluster:
    """One encoded cluster: degrees, half coefficient bits and half bounds bits."""

    degrees: dict
    coeff_bits: dict  # kind -> uint16 array (n_features, dim)
    bounds_bits: np.ndarray  # uint16 (6,): min xyz then max xyz
    member_count: int

    @property
    def bounds(self):
        b = from_half(self.bounds_bits)
        return b[:3], b[3:]

    def models(self):
        lo, hi = self.bounds
        return {k: PolyModel(self.degrees[k], from_half(self.coeff_bits[k]), lo, hi)
                for k in ATTRIBUTE_KINDS}

    @property
    def n_coefficients(self):
        return int(sum(self.coeff_bits[k].size for k in ATTRIBUTE_KINDS))


@dataclass
class EncodedSketch:
    clusters: list
    positions_blob: bytes
    # Original scene index of every decoded row (encoder side only, never serialized).
    source_indices: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n_splats(self):
        return int(sum(c.member_count for c in self.clusters))

    def coefficient_section(self):
        return _serialize_clusters(self.clusters)

    def to_bytes(self):
        coeffs = zlib.compress(self.coefficient_section(), ZLIB_LEVEL)
        return b"".join([_U32.pack(len(self.clusters)), _U32.pack(len(coeffs)), coeffs,
                         _U32.pack(len(self.positions_blob)), self.positions_blob])

    @classmethod
    def from_bytes(cls, data):
        data = memoryview(data)
        pos = 0

        def take(n, what):
            nonlocal pos
            if pos + n > len(data):
                raise FormatError(f"truncated sketch section ({what})", offset=pos)
            out = bytes(data[pos:pos + n])
            pos += n
            return out

        n_clusters = _U32.unpack(take(4, "cluster count"))[0]
        clen = _U32.unpack(take(4, "coefficient length"))[0]
        start = pos
        try:
            raw = zlib.decompress(take(clen, "coefficients"))
        except zlib.error as exc:
            raise FormatError(f"corrupt coefficient stream: {exc}", offset=start) from None
        clusters = _parse_clusters(raw, n_clusters)
        plen = _U32.unpack(take(4, "positions length"))[0]
        blob = take(plen, "positions")
        if pos != len(data):
            raise FormatError("trailing bytes after sketch section", offset=pos)
        return cls(clusters, blob)

    def size_breakdown(self):
        """Byte counts of the serialized coefficient and position parts."""
        coeffs = len(zlib.compress(self.coefficient_section(), ZLIB_LEVEL))
        return {"coefficients": coeffs + 8, "positions": len(self.positions_blob) + 4}


# ---------------------------------------------------------------------------
# Positions
# ---------------------------------------------------------------------------

def grid_bounds(bbox_min, bbox_max):
    """Float64 grid origin and extent; degenerate axes widened by 1e-9."""
    lo = np.asarray(bbox_min, dtype=np.float64).copy()
    hi = np.asarray(bbox_max, dtype=np.float64).copy()
    flat = hi - lo < DEGENERATE_EXTENT
    lo[flat] -= DEGENERATE_EXTENT
    hi[flat] += DEGENERATE_EXTENT
    return lo, hi


def quantize_positions(positions, lo, hi):
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    q = np.floor((p - lo) / (hi - lo) * GRID_CELLS)
    return np.clip(q, 0, GRID_CELLS - 1).astype(np.int64)


def dequantize_positions(q, lo, hi):
    return lo + (np.asarray(q, dtype=np.float64) + 0.5) * ((hi - lo) / GRID_CELLS)


def morton_order(q):
    """Stable permutation sorting quantised triples by Morton code."""
    return np.argsort(kernels.morton_codes(np.ascontiguousarray(q, dtype=np.int64)), kind="stable")


def _deltas(q, counts):
    d = np.diff(q, axis=0, prepend=np.zeros((1, 3), np.int64))
    starts = np.cumsum(counts)[:-1]
    starts = starts[starts < len(q)]
    d[starts] = q[starts]  # each cluster restarts from absolute coordinates
    return d


def compress_positions(positions, counts, bbox_min, bbox_max, presorted=False):
    """Grid-quantise, Morton-sort per cluster and deflate positions.

    ``counts`` gives consecutive cluster sizes. Returns ``(blob, order)``
    where ``order`` is the permutation applied to ``positions``.
    """
    counts = np.asarray(counts, dtype=np.int64)
    lo, hi = grid_bounds(bbox_min, bbox_max)
    q = quantize_positions(positions, lo, hi)
    if int(counts.sum()) != len(q):
        raise ValueError("cluster counts do not add up to the number of positions")
    order = np.arange(len(q))
    if not presorted:
        offs = np.concatenate([[0], np.cumsum(counts)])
        for a, b in zip(offs[:-1], offs[1:]):
            order[a:b] = a + morton_order(q[a:b])
    q = q[order]
    d = _deltas(q, counts)
    body = b"".join([
        _BBOX.pack(*lo, *hi),
        kernels.encode_varints(np.concatenate([[len(counts)], counts]).astype(np.int64)),
        kernels.encode_varints(np.ascontiguousarray(d.T.ravel())),
    ])
    return zlib.compress(body, ZLIB_LEVEL), order


def _decode_varints(buf, offset, count):
    try:
        return kernels.decode_varints(buf, offset, count)
    except ValueError as exc:
        raise FormatError(f"bad varint stream: {exc}", offset=offset) from None


def decompress_positions(blob):
    """Inverse of :func:`compress_positions`: ``(positions, counts, quantized)``."""
    try:
        body = zlib.decompress(bytes(blob))
    except zlib.error as exc:
        raise FormatError(f"corrupt position stream: {exc}", offset=0) from None
    if len(body) < _BBOX.size:
        raise FormatError("position stream shorter than its bounding box", offset=len(body))
    vals = np.array(_BBOX.unpack_from(body, 0))
    lo, hi = vals[:3], vals[3:]
    if not (np.isfinite(vals).all() and (hi > lo).all()):
        raise FormatError("invalid position grid bounds", offset=0)
    (k,), off = _decode_varints(body, _BBOX.size, 1)
    if k < 0 or k > len(body):
        raise FormatError("implausible cluster count", offset=_BBOX.size)
    counts, off = _decode_varints(body, off, int(k))
    if (counts < 0).any() or counts.sum() > 3 * len(body):
        raise FormatError("implausible cluster sizes", offset=off)
    n = int(counts.sum())
    d, off = _decode_varints(body, off, 3 * n)
    if off != len(body):
        raise FormatError("trailing bytes in position stream", offset=off)
    d = d.reshape(3, n).T.copy()
    q = np.empty_like(d)
    start = 0
    for c in counts:
        q[start:start + c] = np.cumsum(d[start:start + c], axis=0)
        start += c
    if n and (q.min() < 0 or q.max() >= GRID_CELLS):
        raise FormatError("quantized coordinate outside the grid", offset=off)
    return dequantize_positions(q, lo, hi), counts, q


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------

def encode_cluster(model):
    lo, hi = model.norm_bounds
    return SketchCluster(
        degrees=dict(model.degrees),
        coeff_bits={k: to_half(model.models[k].coeffs) for k in ATTRIBUTE_KINDS},
        bounds_bits=to_half(np.concatenate([lo, hi])),
        member_count=len(model),
    )


def _serialize_clusters(clusters):
    parts = []
    for c in clusters:
        parts.append(_CLUSTER_HEAD.pack(c.member_count, *c.bounds_bits.tolist(),
                                        *(c.degrees[k] for k in ATTRIBUTE_KINDS)))
        for k in ATTRIBUTE_KINDS:
            parts.append(np.ascontiguousarray(c.coeff_bits[k], dtype="<u2").tobytes())
    return b"".join(parts)


def _parse_clusters(raw, n_clusters):
    clusters, pos = [], 0
    for _ in range(n_clusters):
        if pos + _CLUSTER_HEAD.size > len(raw):
            raise FormatError("truncated cluster header", offset=pos)
        head = _CLUSTER_HEAD.unpack_from(raw, pos)
        pos += _CLUSTER_HEAD.size
        count, bounds, degs = head[0], np.array(head[1:7], np.uint16), head[7:]
        lo, hi = from_half(bounds[:3]), from_half(bounds[3:])
        if not (np.isfinite(lo).all() and np.isfinite(hi).all() and (hi > lo).all()):
            raise FormatError("invalid normalization bounds", offset=pos - _CLUSTER_HEAD.size)
        coeffs, degrees = {}, {}
        for k, d in zip(ATTRIBUTE_KINDS, degs):
            if not 1 <= d <= 10:
                raise FormatError(f"invalid polynomial degree {d}", offset=pos)
            shape = (polynomial_feature_count(d), ATTRIBUTE_DIMS[k])
            nbytes = 2 * shape[0] * shape[1]
            if pos + nbytes > len(raw):
                raise FormatError("truncated coefficient block", offset=pos)
            coeffs[k] = np.frombuffer(raw, "<u2", shape[0] * shape[1], pos).reshape(shape).astype(np.uint16)
            degrees[k] = int(d)
            pos += nbytes
        clusters.append(SketchCluster(degrees, coeffs, bounds, int(count)))
    if pos != len(raw):
        raise FormatError("trailing bytes in coefficient section", offset=pos)
    return clusters


def encode_sketch(clusters, scene):
    """Encode accepted cluster models and their member positions.

    The scene bounding box defines the position grid. The returned object
    remembers which scene splat each decoded row comes from.
    """
    counts = [len(m) for m in clusters]
    members = (np.concatenate([m.member_indices for m in clusters]).astype(np.int64)
               if clusters else np.zeros(0, np.int64))
    blob, order = compress_positions(scene.positions[members], counts, scene.bbox_min, scene.bbox_max)
    return EncodedSketch([encode_cluster(m) for m in clusters], blob, members[order])


def attributes_to_storage(attrs, positions):
    """Activated attribute rows (scaling, rotation, opacity, color) to a Scene."""
    n = len(positions)
    color = attrs["color"]
    return Scene(
        positions,
        np.log(attrs["scaling"]),
        attrs["rotation"],
        logit(attrs["opacity"][:, 0]) if n else np.zeros(0),
        color[:, :3],
        color[:, 3:3 + N_SH_REST],
    )


def decode_positions(sketch):
    positions, counts, _ = decompress_positions(sketch.positions_blob)
    if len(counts) != len(sketch.clusters) or any(
            int(c) != s.member_count for c, s in zip(counts, sketch.clusters)):
        raise FormatError("position stream does not match the cluster table")
    return positions, counts


def decode_sketch_attributes(sketch):
    """Decoded positions and activated attribute rows, in storage order."""
    positions, counts = decode_positions(sketch)
    parts = {k: [] for k in ATTRIBUTE_KINDS}
    start = 0
    for c, cnt in zip(sketch.clusters, counts):
        pred = predict_attributes(c.models(), positions[start:start + cnt])
        for k in ATTRIBUTE_KINDS:
            parts[k].append(pred[k])
        start += cnt
    attrs = {k: (np.concatenate(parts[k]) if parts[k] else np.zeros((0, ATTRIBUTE_DIMS[k])))
             for k in ATTRIBUTE_KINDS}
    return positions, attrs


def decode_sketch(sketch):
    """Reconstruct the sketch splats as a :class:`Scene`."""
    positions, attrs = decode_sketch_attributes(sketch)
    return attributes_to_storage(attrs, positions)
