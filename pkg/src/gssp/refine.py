"""Quality-driven cluster refinement and the final sketch/patch split.

Clusters from :func:`gssp.clustering.dbscan` are fitted with polynomial
attribute models. Poorly modelled clusters are split with K-means over
fused residual and position features until they fit, become too small, or
run out of split rounds. A Tukey-fence pass on decoded scales then moves
outliers to the patch set.
"""
from __future__ import annotations

import dataclasses
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterFeatures, ClusterParams, dbscan
from .errors import InputError, SplitRefused
from .polyfit import ATTRIBUTE_KINDS, attribute_matrices, fit_cluster, predict_attributes
from .sketch_codec import dequantize_positions, grid_bounds, quantize_positions
from .splat_model import activate_scene

IQR_FENCE = 1.5
KMEANS_MAX_ITER = 100
MAX_SPLIT_K = 4


@dataclass(frozen=True)
class RefineParams:
    tau_max: float = 0.01
    beta: float = 0.5
    s_min: int = 50
    t_max: int = 5
    kmeans_seed: int = 0

    def __post_init__(self):
        # tau_max == 0 is allowed and means no cluster can qualify.
        if not self.tau_max >= 0:
            raise InputError("tau_max must be >= 0")
        if not 0 <= self.beta <= 1:
            raise InputError("beta must lie in [0, 1]")
        if self.s_min < 2 or self.t_max < 1:
            raise InputError("s_min must be >= 2 and t_max >= 1")
        if self.kmeans_seed < 0:
            raise InputError("kmeans_seed must be non-negative")

    def accepts(self, model):
        return len(model) >= self.s_min and model.mse_combined < self.tau_max


@dataclass
class Categorization:
    sketch_clusters: list
    patch_indices: np.ndarray
    n_splats: int
    stats: dict = field(default_factory=dict)

    def sketch_indices(self):
        if not self.sketch_clusters:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([c.member_indices for c in self.sketch_clusters])

    @property
    def n_sketch(self):
        return int(sum(len(c) for c in self.sketch_clusters))


@dataclass
class RefineResult:
    accepted: list
    rejected: np.ndarray
    n_splits: int = 0


def check_partition(n, groups, stage):
    """Raise if ``groups`` (index arrays) do not partition range(n)."""
    allidx = np.concatenate([np.asarray(g, np.int64) for g in groups]) if groups else np.zeros(0, np.int64)
    if len(allidx) != n or (n and not np.array_equal(np.sort(allidx), np.arange(n))):
        raise RuntimeError(f"partition invariant violated after {stage}")


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def _minmax_columns(M, tol):
    lo, hi = M.min(axis=0), M.max(axis=0)
    rng = hi - lo
    ok = rng > tol
    out = np.zeros_like(M)
    out[:, ok] = (M[:, ok] - lo[ok]) / rng[ok]
    return out


def residual_features(act, model):
    """Absolute fit residuals of all attribute kinds, each block scaled to [0, 1].

    Returns an (n, 56) matrix: scaling 3, rotation 4, opacity 1, colour 48.
    """
    idx = model.member_indices
    pos = act.positions[idx]
    targets = attribute_matrices(act, idx)
    blocks = []
    for kind in ATTRIBUTE_KINDS:
        A = targets[kind]
        R = np.abs(model.models[kind].predict_raw(pos) - A)
        lo, hi = R.min(), R.max()
        tol = 1e-12 * (1.0 + np.abs(A).max())
        blocks.append((R - lo) / (hi - lo) if hi - lo > tol else np.zeros_like(R))
    return np.concatenate(blocks, axis=1)


def split_count(mse_combined, tau_max):
    """Number of sub-clusters: ceil(mse / tau) + 1 clamped to [2, 4]."""
    if tau_max <= 0:
        return MAX_SPLIT_K
    return int(min(MAX_SPLIT_K, max(2, math.ceil(mse_combined / tau_max) + 1)))


def kmeans_plusplus(F, k, rng):
    """k-means++ seeding; returns fewer than k centres if points run out."""
    n = len(F)
    centers = [F[rng.integers(n)]]
    d2 = ((F - centers[0]) ** 2).sum(axis=1)
    while len(centers) < k:
        total = d2.sum()
        if total <= 0:
            break
        c = F[rng.choice(n, p=d2 / total)]
        centers.append(c)
        d2 = np.minimum(d2, ((F - c) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(F, k, rng, max_iter=KMEANS_MAX_ITER):
    """Lloyd iterations from k-means++ seeds until the assignment is a fixpoint."""
    F = np.asarray(F, dtype=np.float64)
    centers = kmeans_plusplus(F, k, rng)
    labels = None
    for _ in range(max_iter):
        d2 = ((F[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(len(centers)):
            sel = labels == c
            if sel.any():
                centers[c] = F[sel].mean(axis=0)
    return labels


def split_cluster(act, model, params, rng):
    """Partition a poorly fitting cluster into 2-4 parts (empty parts dropped)."""
    idx = model.member_indices
    if len(idx) < 2 * params.s_min:
        raise SplitRefused(f"cluster of {len(idx)} splats is below 2 * s_min")
    R = residual_features(act, model)
    X = _minmax_columns(act.positions[idx], 1e-12)
    F = np.concatenate([params.beta * R, (1 - params.beta) * X], axis=1)
    labels = kmeans(F, split_count(model.mse_combined, params.tau_max), rng)
    return [idx[labels == c] for c in range(labels.max() + 1) if (labels == c).any()]


# ---------------------------------------------------------------------------
# Recursive refinement
# ---------------------------------------------------------------------------

def _refine_one(root_id, members, act, params, quantization_aware):
    accepted, rejected, n_splits = [], [], 0
    queue = deque([(np.asarray(members, np.int64), 0, ())])
    while queue:
        idx, depth, path = queue.popleft()
        if len(idx) < params.s_min or params.tau_max <= 0:
            rejected.append(idx)
            continue
        model = fit_cluster(act, idx, quantization_aware=quantization_aware)
        if params.accepts(model):
            accepted.append(model)
            continue
        if depth >= params.t_max:
            rejected.append(idx)
            continue
        rng = np.random.default_rng([params.kmeans_seed, root_id, *path])
        try:
            parts = split_cluster(act, model, params, rng)
        except SplitRefused:
            rejected.append(idx)
            continue
        if len(parts) < 2:
            rejected.append(idx)
            continue
        n_splits += 1
        for c, part in enumerate(parts):
            queue.append((part, depth + 1, path + (c,)))
    return accepted, rejected, n_splits


def refine_partition(clusters, act, params, jobs=1, quantization_aware=True):
    """Fit, accept or split every cluster; returns accepted models and rejected indices.

    Roots are independent and may be processed on ``jobs`` threads; results are
    merged in root order so the output does not depend on the thread count.
    """
    work = list(enumerate(clusters))

    def run(item):
        return _refine_one(item[0], item[1], act, params, quantization_aware)

    if jobs > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, work))
    else:
        results = [run(w) for w in work]
    accepted, rejected, n_splits = [], [], 0
    for acc, rej, ns in results:
        accepted.extend(acc)
        rejected.extend(rej)
        n_splits += ns
    rej = np.sort(np.concatenate(rejected)) if rejected else np.zeros(0, np.int64)
    return RefineResult(accepted, rej, n_splits)


def scale_outliers(decoded_scales):
    """Rows with any axis outside the Tukey fences (boundary counts as inside)."""
    q1, q3 = np.percentile(decoded_scales, [25, 75], axis=0)
    iqr = q3 - q1
    lo, hi = q1 - IQR_FENCE * iqr, q3 + IQR_FENCE * iqr
    return ((decoded_scales < lo) | (decoded_scales > hi)).any(axis=1)


def iqr_scale_filter(accepted, act, params, quantization_aware=True):
    """Move splats with extreme decoded scales out of the sketch clusters.

    Clusters left below ``s_min`` are dropped entirely; the others are refit
    once and dropped if the refit no longer meets the quality threshold.
    """
    kept, reclassified = [], []
    for model in accepted:
        idx = model.member_indices
        scales = predict_attributes(model.models, act.positions[idx], kinds=("scaling",))["scaling"]
        out = scale_outliers(scales)
        if not out.any():
            kept.append(model)
            continue
        reclassified.append(idx[out])
        survivors = idx[~out]
        if len(survivors) < params.s_min:
            reclassified.append(survivors)
            continue
        refit = fit_cluster(act, survivors, quantization_aware=quantization_aware)
        if params.accepts(refit):
            kept.append(refit)
        else:
            reclassified.append(survivors)
    recl = np.sort(np.concatenate(reclassified)) if reclassified else np.zeros(0, np.int64)
    return kept, recl


def grid_snapped(act, bbox_min, bbox_max):
    """Copy of ``act`` with positions moved to the centres of their 16-bit grid cells."""
    lo, hi = grid_bounds(bbox_min, bbox_max)
    snapped = dequantize_positions(quantize_positions(act.positions, lo, hi), lo, hi)
    return dataclasses.replace(act, positions=snapped)


def categorize(scene, cluster_params=None, refine_params=None, jobs=1, quantization_aware=True):
    """Split a scene into polynomial-coded sketch clusters and patch splats.

    Clustering sees the original positions. With ``quantization_aware`` the
    models are fitted at grid-snapped positions, the exact inputs the decoder
    evaluates them at.
    """
    n = len(scene)
    if n == 0:
        raise InputError("cannot categorize an empty scene")
    if cluster_params is None:
        cluster_params = ClusterParams.for_diagonal(scene.diagonal)
    if refine_params is None:
        refine_params = RefineParams()
    act = activate_scene(scene)
    labeling = dbscan(ClusterFeatures.from_activated(act), cluster_params)
    clusters = labeling.clusters()
    noise = labeling.noise()
    check_partition(n, clusters + [noise], "dbscan")
    if quantization_aware and n:
        act = grid_snapped(act, scene.bbox_min, scene.bbox_max)

    res = refine_partition(clusters, act, refine_params, jobs=jobs,
                           quantization_aware=quantization_aware)
    check_partition(n, [m.member_indices for m in res.accepted] + [noise, res.rejected], "refine")

    kept, recl = iqr_scale_filter(res.accepted, act, refine_params,
                                  quantization_aware=quantization_aware)
    patch = np.sort(np.concatenate([noise, res.rejected, recl])).astype(np.int64)
    check_partition(n, [m.member_indices for m in kept] + [patch], "iqr filter")
    stats = {
        "dbscan_clusters": labeling.n_clusters,
        "dbscan_noise": int(len(noise)),
        "splits": res.n_splits,
        "accepted_clusters": len(res.accepted),
        "rejected_splats": int(len(res.rejected)),
        "iqr_reclassified": int(len(recl)),
        "sketch_clusters": len(kept),
    }
    return Categorization(kept, patch, n, stats)
