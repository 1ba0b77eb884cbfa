"""Synthetic scenes with planted curvilinear structure for tests and benchmarks.

Planted clusters are dense samples along smooth 3D curves whose attributes
are low-degree polynomials of position; background splats are uniform with
random attributes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .splat_model import N_SH_REST, SH_C0, Scene, logit


@dataclass
class SyntheticScene:
    scene: Scene
    truth: np.ndarray  # planted cluster id per splat, -1 for background

    @property
    def planted(self):
        return np.flatnonzero(self.truth >= 0)

    @property
    def background(self):
        return np.flatnonzero(self.truth < 0)


def _unit(v):
    return v / np.linalg.norm(v)


def _quat_from_x_axis(direction):
    """Unit quaternion (w, x, y, z) rotating the x axis onto ``direction``."""
    d = _unit(direction)
    x = np.array([1.0, 0.0, 0.0])
    c = float(np.dot(x, d))
    axis = np.cross(x, d)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = np.arccos(np.clip(c, -1, 1)) / 2
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / s])


def _poly_field(rng, u, dim, base, lin, quad):
    """base + linear + quadratic field of the (n, 3) local coordinates ``u``."""
    G = rng.normal(0, lin, size=(3, dim))
    H = rng.normal(0, quad, size=(3, dim))
    return base + u @ G + (u ** 2) @ H


def planted_curve(rng, n, center, length, noise=0.0, curvature=0.15):
    """Splat arrays for one curve cluster (positions and activated attributes)."""
    tangent = _unit(np.array([1.0, *rng.uniform(-0.6, 0.6, 2)]))
    bend = rng.normal(0, 1, 3)
    bend -= bend.dot(tangent) * tangent
    bend = _unit(bend) * curvature * length
    t = np.sort(rng.uniform(-0.5, 0.5, n))
    pos = center + np.outer(t, tangent * length) + np.outer(t ** 2, bend)
    u = (pos - center) / length

    q0 = _quat_from_x_axis(tangent)
    rot = q0 + _poly_field(rng, u, 4, 0.0, 0.03, 0.0)
    base_scale = np.array([length / n * 3.0, length / n * 0.8, length / n * 0.6])
    scale = base_scale * (1 + _poly_field(rng, u, 3, 0.0, 0.15, 0.05))
    opacity = np.clip(_poly_field(rng, u, 1, rng.uniform(0.4, 0.8), 0.1, 0.05)[:, 0], 0.05, 0.95)
    dc = _poly_field(rng, u, 3, rng.uniform(-1.2, 1.2, 3), 0.1, 0.05)
    rest = _poly_field(rng, u, N_SH_REST, rng.normal(0, 0.05, N_SH_REST), 0.02, 0.01)

    if noise:
        rot = rot + rng.normal(0, noise, rot.shape)
        scale = scale * np.exp(rng.normal(0, noise, scale.shape))
        opacity = np.clip(opacity + rng.normal(0, noise, n), 0.01, 0.99)
        dc = dc + rng.normal(0, noise, dc.shape)
        rest = rest + rng.normal(0, noise, rest.shape)
    return pos, np.log(scale), rot, logit(opacity), dc, rest


def random_splats(rng, n, lo, hi):
    pos = rng.uniform(lo, hi, size=(n, 3))
    rot = rng.normal(size=(n, 4))
    log_scale = rng.uniform(-6.0, -3.0, size=(n, 3))
    opacity = rng.uniform(-3.0, 3.0, size=n)
    dc = rng.uniform(-0.5 / SH_C0, 0.5 / SH_C0, size=(n, 3))
    rest = rng.normal(0, 0.1, size=(n, N_SH_REST))
    return pos, log_scale, rot, opacity, dc, rest


def synthetic_scene(seed=0, n_clusters=3, per_cluster=500, n_background=500, length=0.4,
                    noise=0.002, box=1.0, shuffle=True):
    """Curves inside ``[0, box]^3`` plus uniform background splats."""
    rng = np.random.default_rng(seed)
    parts, truth = [], []
    margin = 0.5 * length + 0.05 * box
    for c in range(n_clusters):
        center = rng.uniform(margin, box - margin, 3)
        parts.append(planted_curve(rng, per_cluster, center, length, noise=noise))
        truth.append(np.full(per_cluster, c))
    if n_background:
        parts.append(random_splats(rng, n_background, 0.0, box))
        truth.append(np.full(n_background, -1))
    arrays = [np.concatenate(f) for f in zip(*parts)]
    truth = np.concatenate(truth)
    if shuffle:
        perm = rng.permutation(len(truth))
        arrays = [a[perm] for a in arrays]
        truth = truth[perm]
    return SyntheticScene(Scene(*arrays), truth)


def random_scene(seed=0, n=100, scale=1.0):
    """Unstructured scene with arbitrary valid attributes (for I/O tests)."""
    rng = np.random.default_rng(seed)
    pos, log_scale, rot, opacity, dc, rest = random_splats(rng, n, -scale, scale)
    return Scene(pos, log_scale, rot, opacity, dc, rest)
