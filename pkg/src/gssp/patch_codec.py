"""Patch section: uniform pruning, shared-codebook vector quantisation, half positions.

Every splat costs 62 bytes: three binary16 coordinates and one byte-sized
codebook index for each of its 56 attribute components. Components of the
same attribute group share one codebook of at most 256 binary16 entries.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import FormatError, InputError
from .halffloat import from_half, to_half
from .splat_model import N_SH_REST, Scene, activate_scene, canonical_quaternions, load_ply, logit

#: Attribute groups in payload order with their component counts.
PATCH_GROUPS = (("opacity", 1), ("scale", 3), ("rot_real", 1), ("rot_imag", 3),
                ("color_dc", 3), ("color_rest", N_SH_REST))
N_COMPONENTS = sum(d for _, d in PATCH_GROUPS)
BYTES_PER_SPLAT = 3 * 2 + N_COMPONENTS
CODEBOOK_SIZE = 256
CODEBOOK_ITERS = 50
#: Above this many distinct values, codebooks are trained on a seeded subsample.
MAX_TRAIN_VALUES = 1 << 20
OPACITY_MARGIN = 1e-6
# Smallest positive binary16 (subnormal); keeps decoded scales out of log(0).
HALF_TINY = 2.0 ** -24

_GROUP_SLICES = {}
_start = 0
for _name, _dim in PATCH_GROUPS:
    _GROUP_SLICES[_name] = slice(_start, _start + _dim)
    _start += _dim
del _start, _name, _dim


@dataclass(frozen=True)
class PruneSpec:
    downsample_factor: int = 1
    seed: int = 0

    def __post_init__(self):
        if int(self.downsample_factor) != self.downsample_factor or self.downsample_factor < 1:
            raise InputError("downsample factor must be an integer >= 1")


def prune_uniform(indices, spec):
    """Keep floor(n / factor) of ``indices``, sampled uniformly; result ascending."""
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    if spec.downsample_factor == 1:
        return idx
    keep = len(idx) // int(spec.downsample_factor)
    rng = np.random.default_rng(spec.seed)
    return np.sort(idx[rng.choice(len(idx), size=keep, replace=False)])


# ---------------------------------------------------------------------------
# Codebooks
# ---------------------------------------------------------------------------

def _kmeans_pp_1d(values, weights, k, rng):
    centers = [values[rng.choice(len(values), p=weights / weights.sum())]]
    d2 = (values - centers[0]) ** 2
    for _ in range(1, k):
        p = d2 * weights
        total = p.sum()
        if total <= 0:
            break
        c = values[rng.choice(len(values), p=p / total)]
        centers.append(c)
        np.minimum(d2, (values - c) ** 2, out=d2)
    return np.unique(centers)


def train_codebook(values, k=CODEBOOK_SIZE, seed=0, max_iter=CODEBOOK_ITERS):
    """Sorted scalar codebook of at most ``k`` entries.

    With no more than ``k`` distinct values the codebook is exactly those
    values. Otherwise weighted 1-D k-means (k-means++ seeding, Lloyd until the
    assignment stops changing or ``max_iter`` rounds) runs on the distinct values.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InputError("cannot train a codebook on no values")
    uniq, counts = np.unique(v, return_counts=True)
    if len(uniq) <= k:
        return uniq
    rng = np.random.default_rng(seed)
    if len(uniq) > MAX_TRAIN_VALUES:
        pick = np.sort(rng.choice(len(uniq), MAX_TRAIN_VALUES, replace=False))
        uniq, counts = uniq[pick], counts[pick]
    w = counts.astype(np.float64)
    centers = _kmeans_pp_1d(uniq, w, k, rng)
    labels = None
    for _ in range(max_iter):
        new = kernels.nearest_sorted(uniq, centers)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        mass = np.bincount(labels, weights=w, minlength=len(centers))
        sums = np.bincount(labels, weights=w * uniq, minlength=len(centers))
        used = mass > 0
        centers = np.where(used, sums / np.where(used, mass, 1.0), centers)
        centers = np.sort(centers)
    return np.unique(centers)


def half_codebook(codebook):
    """Round entries to binary16 and return sorted unique bit patterns."""
    vals = np.unique(from_half(to_half(codebook)))
    return to_half(vals)


# ---------------------------------------------------------------------------
# Payload
# ---------------------------------------------------------------------------

@dataclass
class PatchPayload:
    positions_half: np.ndarray  # uint16 (n, 3)
    codebooks: dict  # group -> uint16 bits, ascending by value
    indices: np.ndarray  # uint8 (n, 56)

    def __len__(self):
        return len(self.positions_half)

    def __eq__(self, other):
        if not isinstance(other, PatchPayload):
            return NotImplemented
        return (np.array_equal(self.positions_half, other.positions_half)
                and np.array_equal(self.indices, other.indices)
                and all(np.array_equal(self.codebooks[g], other.codebooks[g]) for g, _ in PATCH_GROUPS))

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return PatchPayload(self.positions_half[rows], dict(self.codebooks), self.indices[rows])

    def validate(self):
        n = len(self)
        if self.positions_half.shape != (n, 3) or self.indices.shape != (n, N_COMPONENTS):
            raise FormatError("patch payload arrays have inconsistent shapes")
        for g, _ in PATCH_GROUPS:
            cb = self.codebooks[g]
            if not 1 <= len(cb) <= CODEBOOK_SIZE:
                raise FormatError(f"codebook {g} has {len(cb)} entries")
            vals = from_half(cb)
            if not (np.isfinite(vals).all() and (np.diff(vals) > 0).all()):
                raise FormatError(f"codebook {g} is not finite and strictly ascending")
            if n and self.indices[:, _GROUP_SLICES[g]].max() >= len(cb):
                raise FormatError(f"index out of range for codebook {g}")
        if not np.isfinite(from_half(self.positions_half)).all():
            raise FormatError("non-finite patch position")

    def to_bytes(self, with_codebooks=True):
        """Little-endian layout: count, positions, codebooks (optional), index planes.

        Without ``with_codebooks`` the codebook block is left out; the reader
        must then be given the codebooks separately.
        """
        n = len(self)
        parts = [struct.pack("<I", n), np.ascontiguousarray(self.positions_half, "<u2").tobytes()]
        if with_codebooks:
            for g, _ in PATCH_GROUPS:
                cb = self.codebooks[g]
                parts += [struct.pack("<H", len(cb)), np.ascontiguousarray(cb, "<u2").tobytes()]
        parts.append(np.ascontiguousarray(self.indices.T).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data, codebooks=None):
        """Inverse of :meth:`to_bytes`; pass ``codebooks`` for a payload stored without them."""
        data = bytes(data)
        if len(data) < 4:
            raise FormatError("truncated patch payload", offset=0)
        n = struct.unpack_from("<I", data, 0)[0]
        pos = 4
        if pos + 6 * n > len(data):
            raise FormatError("truncated patch positions", offset=pos)
        positions = np.frombuffer(data, "<u2", 3 * n, pos).reshape(n, 3).astype(np.uint16)
        pos += 6 * n
        if codebooks is None:
            books = {}
            for g, _ in PATCH_GROUPS:
                if pos + 2 > len(data):
                    raise FormatError(f"truncated codebook {g}", offset=pos)
                m = struct.unpack_from("<H", data, pos)[0]
                pos += 2
                if pos + 2 * m > len(data):
                    raise FormatError(f"truncated codebook {g}", offset=pos)
                books[g] = np.frombuffer(data, "<u2", m, pos).astype(np.uint16)
                pos += 2 * m
        else:
            books = dict(codebooks)
        if len(data) - pos != N_COMPONENTS * n:
            raise FormatError(f"index planes: expected {N_COMPONENTS * n} bytes, found {len(data) - pos}",
                              offset=pos)
        indices = np.frombuffer(data, np.uint8, N_COMPONENTS * n, pos).reshape(N_COMPONENTS, n).T.copy()
        payload = cls(positions, books, indices)
        payload.validate()
        return payload

    @property
    def nbytes_per_splat(self):
        return BYTES_PER_SPLAT


def patch_components(scene):
    """(n, 56) activated component matrix in payload group order."""
    act = activate_scene(scene)
    q = canonical_quaternions(act.rot_unit) if len(scene) else np.zeros((0, 4))
    return np.concatenate([act.opacity[:, None], act.scales, q[:, :1], q[:, 1:],
                           act.sh_dc, act.sh_rest], axis=1)


def quantize_components(comps, seed=0, k=CODEBOOK_SIZE):
    """Train one codebook per group and assign every component to its nearest entry."""
    comps = np.asarray(comps, dtype=np.float64)
    n = len(comps)
    books = {}
    indices = np.zeros((n, N_COMPONENTS), dtype=np.uint8)
    for gi, (g, _) in enumerate(PATCH_GROUPS):
        block = comps[:, _GROUP_SLICES[g]]
        if n == 0:
            books[g] = to_half(np.zeros(1))
            continue
        bits = half_codebook(train_codebook(block, k=k, seed=int(seed) * 8 + gi))
        books[g] = bits
        idx = kernels.nearest_sorted(block.ravel(), from_half(bits)).reshape(block.shape)
        indices[:, _GROUP_SLICES[g]] = idx
    return books, indices


def quantize_patch(scene, seed=0, k=CODEBOOK_SIZE):
    """Vector-quantise a patch scene into a :class:`PatchPayload`."""
    books, indices = quantize_components(patch_components(scene), seed=seed, k=k)
    return PatchPayload(to_half(scene.positions), books, indices)


def dequantize_components(payload):
    """Decoded positions and the (n, 56) component matrix (codebook lookups)."""
    payload.validate()
    comps = np.zeros((len(payload), N_COMPONENTS))
    for g, _ in PATCH_GROUPS:
        sl = _GROUP_SLICES[g]
        comps[:, sl] = from_half(payload.codebooks[g])[payload.indices[:, sl]]
    return from_half(payload.positions_half), comps


def components_to_scene(positions, comps):
    sl = _GROUP_SLICES
    rot = np.concatenate([comps[:, sl["rot_real"]], comps[:, sl["rot_imag"]]], axis=1)
    zero = np.linalg.norm(rot, axis=1) == 0
    rot[zero] = (1.0, 0.0, 0.0, 0.0)
    opacity = np.clip(comps[:, sl["opacity"]][:, 0], OPACITY_MARGIN, 1.0 - OPACITY_MARGIN)
    return Scene(positions, np.log(np.maximum(comps[:, sl["scale"]], HALF_TINY)), rot,
                 logit(opacity), comps[:, sl["color_dc"]], comps[:, sl["color_rest"]])


def dequantize_patch(payload):
    """Expand a payload back to storage-form splats."""
    return components_to_scene(*dequantize_components(payload))


def importance_scores(payload):
    """Opacity times ellipsoid volume of each decoded patch splat."""
    _, comps = dequantize_components(payload)
    s = comps[:, _GROUP_SLICES["scale"]]
    return comps[:, 0] * (4.0 / 3.0 * np.pi) * s[:, 0] * s[:, 1] * s[:, 2]


def import_retrained_patch(ply_bytes, categorization=None):
    """Parse an externally retrained patch set; it replaces the pruned patch wholesale."""
    return load_ply(ply_bytes)
