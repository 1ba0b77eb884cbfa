"""Multi-criteria DBSCAN over activated splats.

Two splats are neighbours when their centres, principal directions and DC
colours are all within their thresholds. Candidates come from a KD-tree
radius search; the direction and colour tests run only on those candidates.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import InputError
from .splat_model import principal_directions

NOISE = -1
DEFAULT_EPS_SPATIAL_REL = 0.005
DEFAULT_EPS_DIRECTION = 0.1
DEFAULT_EPS_COLOR = 0.1
DEFAULT_MIN_SAMPLES = 8


class Role(IntEnum):
    NOISE = 0
    BORDER = 1
    CORE = 2


@dataclass(frozen=True)
class ClusterParams:
    eps_spatial: float
    eps_direction: float = DEFAULT_EPS_DIRECTION
    eps_color: float = DEFAULT_EPS_COLOR
    min_samples: int = DEFAULT_MIN_SAMPLES

    def __post_init__(self):
        if not (self.eps_spatial > 0 and self.eps_direction > 0 and self.eps_color > 0):
            raise InputError("all epsilons must be positive")
        if self.eps_direction > 1:
            raise InputError("eps_direction must be <= 1")
        if self.min_samples < 1:
            raise InputError("min_samples must be >= 1")

    @classmethod
    def for_diagonal(cls, diagonal, eps_spatial=None, **kw):
        """Defaults with the spatial radius set to 0.5% of the scene diagonal."""
        if eps_spatial is None:
            eps_spatial = max(DEFAULT_EPS_SPATIAL_REL * float(diagonal), 1e-12)
        return cls(eps_spatial=eps_spatial, **{k: v for k, v in kw.items() if v is not None})


@dataclass
class Labeling:
    label: np.ndarray
    role: np.ndarray

    @property
    def n_clusters(self):
        return int(self.label.max()) + 1 if len(self.label) and self.label.max() >= 0 else 0

    def clusters(self):
        """Member index arrays, one per cluster id, each ascending."""
        if self.n_clusters == 0:
            return []
        order = np.argsort(self.label, kind="stable")
        lab = self.label[order]
        bounds = np.searchsorted(lab, np.arange(self.n_clusters + 1))
        return [order[bounds[c]:bounds[c + 1]] for c in range(self.n_clusters)]

    def noise(self):
        return np.flatnonzero(self.label == NOISE)


@dataclass(frozen=True)
class ClusterFeatures:
    """Per-splat quantities the neighbourhood predicate looks at."""

    positions: np.ndarray
    directions: np.ndarray
    rgb: np.ndarray

    @classmethod
    def from_activated(cls, act):
        return cls(act.positions, principal_directions(act.scales, act.rot_unit), act.rgb)

    def __len__(self):
        return len(self.positions)


def _query_radius(r):
    # KD-tree pruning uses its own rounding; over-fetch slightly, then test exactly.
    return float(np.nextafter(r * (1 + 1e-9), np.inf))


class SpatialIndex:
    """Immutable KD-tree answering inclusive radius queries exactly."""

    def __init__(self, positions):
        pts = np.asarray(positions, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise InputError("spatial index needs at least one 3D position")
        if not np.isfinite(pts).all():
            raise InputError("non-finite position")
        self.positions = pts
        self._tree = cKDTree(pts, leafsize=16)

    def __len__(self):
        return len(self.positions)

    def query(self, p, r):
        """Indices ``i`` with ``|pos_i - p| <= r``, ascending."""
        p = np.asarray(p, dtype=np.float64)
        cand = np.asarray(self._tree.query_ball_point(p, _query_radius(r)), dtype=np.int64)
        d = np.sqrt(((self.positions[cand] - p) ** 2).sum(axis=1))
        return np.sort(cand[d <= r])

    def pairs(self, r):
        """All ordered pairs (i, j), i != j, within distance ``r``."""
        pr = self._tree.query_pairs(_query_radius(r), output_type="ndarray").astype(np.int64)
        i, j = pr[:, 0], pr[:, 1]
        d = np.sqrt(((self.positions[i] - self.positions[j]) ** 2).sum(axis=1))
        keep = d <= r
        i, j = i[keep], j[keep]
        return np.concatenate([i, j]), np.concatenate([j, i])


def build_spatial_index(positions):
    return SpatialIndex(positions)


def direction_distance(a, b):
    """1 - (cos + 1) / 2 between unit direction vectors (0 same, 1 opposite)."""
    cos = np.clip(np.sum(np.asarray(a) * np.asarray(b), axis=-1), -1.0, 1.0)
    return 1.0 - (cos + 1.0) / 2.0


def color_distance(a, b):
    return np.sqrt(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1))


def _secondary_filter(features, i, j, params):
    keep = direction_distance(features.directions[i], features.directions[j]) <= params.eps_direction
    keep &= color_distance(features.rgb[i], features.rgb[j]) <= params.eps_color
    return keep


def multi_criteria_neighbors(i, features, index, params):
    """Neighbours of splat ``i`` under the conjunctive predicate (``i`` excluded)."""
    cand = index.query(features.positions[i], params.eps_spatial)
    cand = cand[cand != i]
    return cand[_secondary_filter(features, np.full(len(cand), i), cand, params)]


def neighbor_graph(features, index, params):
    """CSR adjacency (indptr, indices) of the conjunctive neighbourhood relation."""
    n = len(features)
    i, j = index.pairs(params.eps_spatial)
    keep = _secondary_filter(features, i, j, params)
    i, j = i[keep], j[keep]
    order = np.lexsort((j, i))
    i, j = i[order], j[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(i, minlength=n), out=indptr[1:])
    return indptr, np.ascontiguousarray(j, dtype=np.int64)


def labels_from_expansion(raw, is_core):
    """Renumber clusters by their lowest member index and derive roles."""
    n = len(raw)
    label = np.full(n, NOISE, dtype=np.int64)
    member = raw >= 0
    k = int(raw.max()) + 1 if member.any() else 0
    if k:
        mins = np.full(k, n, dtype=np.int64)
        np.minimum.at(mins, raw[member], np.flatnonzero(member))
        remap = np.empty(k, dtype=np.int64)
        remap[np.argsort(mins, kind="stable")] = np.arange(k)
        label[member] = remap[raw[member]]
    role = np.full(n, Role.NOISE, dtype=np.int8)
    role[member] = Role.BORDER
    role[is_core] = Role.CORE
    return Labeling(label, role)


def dbscan(features, params, index=None):
    """Density clustering with the three-way neighbourhood predicate.

    ``features`` is a :class:`ClusterFeatures` (or an activated scene, which is
    converted). Splats with at least ``min_samples`` neighbours are core.
    """
    if not isinstance(features, ClusterFeatures):
        features = ClusterFeatures.from_activated(features)
    n = len(features)
    if n == 0:
        return Labeling(np.zeros(0, np.int64), np.zeros(0, np.int8))
    if index is None:
        index = build_spatial_index(features.positions)
    indptr, indices = neighbor_graph(features, index, params)
    is_core = np.diff(indptr) >= params.min_samples
    raw = kernels.expand_clusters(indptr, indices, is_core.astype(np.uint8))
    return labels_from_expansion(raw, is_core)
