"""Per-cluster polynomial regression from normalised positions to splat attributes."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DataError, InputError
from .halffloat import HALF_MAX, round_half
from .splat_model import canonical_quaternions

ATTRIBUTE_KINDS = ("scaling", "rotation", "opacity", "color")
ATTRIBUTE_DIMS = {"scaling": 3, "rotation": 4, "opacity": 1, "color": 48}
ATTRIBUTE_WEIGHT = 0.25
MAX_DEGREE = 10
TIE_RELATIVE = 0.01
TIE_ABSOLUTE = 1e-12
# Half-precision excess below this fraction of signal power counts as rounding noise.
HALF_SLACK = 2.0 ** -18
DEGENERATE_EXTENT = 1e-9
OPACITY_MARGIN = 1e-6
SCALE_FLOOR = 1e-9


def polynomial_feature_count(d):
    """Number of monomials of total degree <= d in three variables."""
    if d < 0:
        raise InputError("degree must be non-negative")
    return (d + 1) * (d + 2) * (d + 3) // 6


@lru_cache(maxsize=None)
def monomial_exponents(d):
    """Exponent triples in graded-lexicographic order, constant term first."""
    rows = []
    for total in range(d + 1):
        for a in range(total, -1, -1):
            for b in range(total - a, -1, -1):
                rows.append((a, b, total - a - b))
    out = np.array(rows, dtype=np.int64).reshape(-1, 3)
    out.setflags(write=False)
    return out


def polynomial_features(X, d):
    """Design matrix of all monomials up to degree ``d`` (graded-lex order)."""
    X = np.asarray(X, dtype=np.float64)
    powers = np.ones((d + 1,) + X.shape)
    for k in range(1, d + 1):
        powers[k] = powers[k - 1] * X
    exps = monomial_exponents(d)
    return powers[exps[:, 0], :, 0].T * powers[exps[:, 1], :, 1].T * powers[exps[:, 2], :, 2].T


@dataclass
class PolyModel:
    degree: int
    coeffs: np.ndarray
    norm_min: np.ndarray
    norm_max: np.ndarray

    @property
    def n_features(self):
        return polynomial_feature_count(self.degree)

    def normalize(self, positions):
        return normalize_positions(positions, self.norm_min, self.norm_max)

    def predict_raw(self, positions):
        """Plain polynomial evaluation without output post-processing."""
        return polynomial_features(self.normalize(positions), self.degree) @ self.coeffs


@dataclass
class ClusterModel:
    member_indices: np.ndarray
    models: dict
    mse_per_attr: dict
    mse_combined: float
    extra: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.member_indices)

    @property
    def norm_bounds(self):
        m = self.models[ATTRIBUTE_KINDS[0]]
        return m.norm_min, m.norm_max

    @property
    def degrees(self):
        return {k: self.models[k].degree for k in ATTRIBUTE_KINDS}


def combined_mse(mse_per_attr):
    return float(sum(ATTRIBUTE_WEIGHT * mse_per_attr[k] for k in ATTRIBUTE_KINDS))


def _half_floor(v):
    """Largest half-representable value <= v (saturating at the half range)."""
    h = np.float16(np.clip(v, -HALF_MAX, HALF_MAX))
    if float(h) > v and float(h) > -HALF_MAX:
        h = np.nextafter(h, np.float16(-np.inf))
    return float(h)


def _half_ceil(v):
    h = np.float16(np.clip(v, -HALF_MAX, HALF_MAX))
    if float(h) < v and float(h) < HALF_MAX:
        h = np.nextafter(h, np.float16(np.inf))
    return float(h)


def normalization_bounds(positions):
    """Per-axis min/max of cluster positions, widened to half-representable values.

    Degenerate axes are first widened by 1e-9 on both sides. Rounding outward
    keeps the stored (half precision) bounds identical to the ones used for fitting.
    """
    p = np.asarray(positions, dtype=np.float64)
    lo, hi = p.min(axis=0), p.max(axis=0)
    flat = hi - lo < DEGENERATE_EXTENT
    lo = np.where(flat, lo - DEGENERATE_EXTENT, lo)
    hi = np.where(flat, hi + DEGENERATE_EXTENT, hi)
    lo = np.array([_half_floor(v) for v in lo])
    hi = np.array([_half_ceil(v) for v in hi])
    return lo, hi


def normalize_positions(positions, lo, hi):
    return (np.asarray(positions, dtype=np.float64) - lo) / (hi - lo)


def fit_attribute(X_norm, A, d):
    """Least-squares fit of ``A`` on degree-``d`` features; returns (coeffs, mse)."""
    X_norm = np.asarray(X_norm, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if len(X_norm) == 0:
        raise InputError("cannot fit an empty cluster")
    if not (np.isfinite(X_norm).all() and np.isfinite(A).all()):
        raise DataError("non-finite input to polynomial fit")
    Phi = polynomial_features(X_norm, d)
    coeffs = np.linalg.lstsq(Phi, A, rcond=None)[0]
    resid = Phi @ coeffs - A
    return coeffs, float((resid ** 2).sum() / len(A))


def degree_cap(n):
    """Largest degree whose feature count stays within max(4, n/2)."""
    limit = max(4.0, n / 2.0)
    d = 1
    while d < MAX_DEGREE and polynomial_feature_count(d + 1) <= limit:
        d += 1
    return d


# Relative singular-value cutoffs tried by the encoded-model search, loosest last.
RANK_CUTOFFS = (1e-12, 1e-10, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


def _select(candidates, floor):
    """First candidate (in preference order) within tolerance of the best score."""
    best = min(score for _, score in candidates)
    for key, score in candidates:
        if score <= best * (1 + TIE_RELATIVE) + floor:
            return key
    raise AssertionError("unreachable")


def _colsum(M):
    return (M * M).sum(axis=0)


def _encoded_candidates(Phi, A):
    """Truncated-SVD least-squares solutions of one design matrix.

    Yields ``(rank, coeffs, float_err, half_err)`` with per-column squared
    error sums, full numerical rank first. ``half_err`` is the error of the
    coefficients after binary16 rounding.
    """
    U, S, Vt = np.linalg.svd(Phi, full_matrices=False)
    b = U.T @ A
    outside = np.maximum(_colsum(A) - _colsum(b), 0.0)
    tol_default = np.finfo(float).eps * max(Phi.shape) * S[0]
    ranks = {int((S > tol_default).sum())}
    ranks.update(int((S > rel * S[0]).sum()) for rel in RANK_CUTOFFS)
    for r in sorted((r for r in ranks if r > 0), reverse=True):
        c = Vt[:r].T @ (b[:r] / S[:r, None])
        ferr = outside + _colsum(b[r:])
        herr = outside + _colsum(S[:, None] * (Vt @ round_half(c)) - b)
        yield r, c, ferr, herr


def grid_search_fit(X_norm, attributes, bounds=None, member_indices=None,
                    quantization_aware=True):
    """Fit every attribute kind at degrees 1..cap and keep the best model per kind.

    Without ``quantization_aware`` this is the plain search: one minimum-norm
    least-squares fit per degree, ranked by training MSE. With it (default),
    each degree also offers truncated-SVD solutions and candidates are ranked by
    the error of their half-precision coefficients, i.e. the model as decoded
    from the bitstream, less a rounding allowance of ``HALF_SLACK`` times the
    signal power. Nearly collinear designs (thin curved clusters) otherwise
    produce huge cancelling coefficients that do not survive binary16.

    Ties within 1% go to the lower degree, then to the higher rank. The returned
    coefficients and MSE are full precision.
    """
    X_norm = np.asarray(X_norm, dtype=np.float64)
    n = len(X_norm)
    if n == 0:
        raise InputError("cannot fit an empty cluster")
    blocks = [np.asarray(attributes[k], dtype=np.float64).reshape(n, -1) for k in ATTRIBUTE_KINDS]
    A = np.concatenate(blocks, axis=1)
    if not (np.isfinite(X_norm).all() and np.isfinite(A).all()):
        raise DataError("non-finite input to polynomial fit")
    edges = np.concatenate([[0], np.cumsum([b.shape[1] for b in blocks])])
    cols = [slice(edges[a], edges[a + 1]) for a in range(len(blocks))]
    cap = degree_cap(n)
    Phi_max = polynomial_features(X_norm, cap)
    slack = [HALF_SLACK * float((b * b).sum()) for b in blocks]

    # candidates[a] -> list of ((degree, rank), score); coeffs[(degree, rank)] -> (p, m)
    candidates = [[] for _ in blocks]
    coeffs = {}
    for d in range(1, cap + 1):
        Phi = Phi_max[:, :polynomial_feature_count(d)]
        if quantization_aware:
            for r, c, ferr, herr in _encoded_candidates(Phi, A):
                coeffs[d, r] = c
                for a, sl in enumerate(cols):
                    score = max(ferr[sl].sum(), herr[sl].sum() - slack[a])
                    candidates[a].append(((d, r), score / n))
        else:
            c = np.linalg.lstsq(Phi, A, rcond=None)[0]
            err = _colsum(Phi @ c - A)
            coeffs[d, 0] = c
            for a, sl in enumerate(cols):
                candidates[a].append(((d, 0), err[sl].sum() / n))

    lo, hi = bounds if bounds is not None else (np.zeros(3), np.ones(3))
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    models, mse = {}, {}
    for a, kind in enumerate(ATTRIBUTE_KINDS):
        floor = TIE_ABSOLUTE * max(1.0, float(np.mean(blocks[a] ** 2)))
        d, r = _select(candidates[a], floor)
        c = coeffs[d, r][:, cols[a]].copy()
        Phi = Phi_max[:, :polynomial_feature_count(d)]
        models[kind] = PolyModel(d, c, lo.copy(), hi.copy())
        mse[kind] = float(_colsum(Phi @ c - blocks[a]).sum() / n)
    members = np.arange(n) if member_indices is None else np.asarray(member_indices, np.int64)
    return ClusterModel(members, models, mse, combined_mse(mse))


def attribute_matrices(act, indices=None):
    """Fitting targets of the four attribute kinds for a set of activated splats."""
    idx = slice(None) if indices is None else np.asarray(indices, dtype=np.int64)
    return {
        "scaling": act.scales[idx],
        "rotation": canonical_quaternions(act.rot_unit[idx]),
        "opacity": act.opacity[idx][:, None],
        "color": np.concatenate([act.sh_dc[idx], act.sh_rest[idx]], axis=1),
    }


def fit_cluster(act, member_indices, quantization_aware=True):
    """Normalise a cluster's positions and run the degree grid search on it."""
    idx = np.asarray(member_indices, dtype=np.int64)
    pos = act.positions[idx]
    lo, hi = normalization_bounds(pos)
    return grid_search_fit(normalize_positions(pos, lo, hi), attribute_matrices(act, idx),
                           bounds=(lo, hi), member_indices=idx,
                           quantization_aware=quantization_aware)


def postprocess(kind, values):
    if kind == "rotation":
        norm = np.linalg.norm(values, axis=1, keepdims=True)
        out = np.where(norm > 0, values / np.where(norm > 0, norm, 1.0), [1.0, 0.0, 0.0, 0.0])
        return out
    if kind == "opacity":
        return np.clip(values, OPACITY_MARGIN, 1.0 - OPACITY_MARGIN)
    if kind == "scaling":
        return np.maximum(values, SCALE_FLOOR)
    return values


def predict_attributes(models, positions, kinds=ATTRIBUTE_KINDS):
    """Decode attribute rows at arbitrary positions.

    Quaternions are renormalised, opacity is clamped into (0, 1) and scales
    are kept strictly positive.
    """
    positions = np.asarray(positions, dtype=np.float64)
    return {k: postprocess(k, models[k].predict_raw(positions)) for k in kinds}
