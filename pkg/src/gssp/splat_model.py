"""Gaussian splat data model, 3DGS PLY I/O and per-subset structure statistics.

A :class:`Scene` stores splats as a struct of float32 arrays in the exact
layout of the reference 3DGS exporter. Activated (physical) quantities are
derived on demand with :func:`activate_scene`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, InputError, ParseError, SchemaError

SH_C0 = 0.28209479177387814
N_SH_REST = 45

PLY_PROPERTIES = (
    ("x", "y", "z", "nx", "ny", "nz")
    + tuple(f"f_dc_{i}" for i in range(3))
    + tuple(f"f_rest_{i}" for i in range(N_SH_REST))
    + ("opacity",)
    + tuple(f"scale_{i}" for i in range(3))
    + tuple(f"rot_{i}" for i in range(4))
)
NORMAL_PROPERTIES = ("nx", "ny", "nz")
REQUIRED_PROPERTIES = tuple(p for p in PLY_PROPERTIES if p not in NORMAL_PROPERTIES)
RECORD_BYTES = 4 * len(PLY_PROPERTIES)

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


@dataclass(frozen=True)
class SplatRecord:
    """One splat as stored in a 3DGS PLY (pre-activation)."""

    position: np.ndarray
    log_scale: np.ndarray
    rot: np.ndarray
    opacity_logit: float
    sh_dc: np.ndarray
    sh_rest: np.ndarray


@dataclass(frozen=True)
class ActivatedSplat:
    position: np.ndarray
    scale: np.ndarray
    rot_unit: np.ndarray
    opacity: float
    rgb: np.ndarray
    sh_rest: np.ndarray


@dataclass(frozen=True)
class ActivatedScene:
    """Vectorised activated attributes of a whole scene (float64)."""

    positions: np.ndarray
    scales: np.ndarray
    rot_unit: np.ndarray
    opacity: np.ndarray
    rgb: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class SubsetStats:
    count: int
    density: float
    elongation: float
    spatial_volume: float


class Scene:
    """Ordered collection of splats with its axis-aligned bounding box."""

    __slots__ = ("positions", "log_scales", "rots", "opacity_logits", "sh_dc", "sh_rest",
                 "bbox_min", "bbox_max")

    def __init__(self, positions, log_scales, rots, opacity_logits, sh_dc, sh_rest):
        n = len(positions)
        self.positions = _as_f32(positions, (n, 3))
        self.log_scales = _as_f32(log_scales, (n, 3))
        self.rots = _as_f32(rots, (n, 4))
        self.opacity_logits = _as_f32(opacity_logits, (n,))
        self.sh_dc = _as_f32(sh_dc, (n, 3))
        self.sh_rest = _as_f32(sh_rest, (n, N_SH_REST))
        if n:
            self.bbox_min = self.positions.min(axis=0)
            self.bbox_max = self.positions.max(axis=0)
        else:
            self.bbox_min = np.zeros(3, np.float32)
            self.bbox_max = np.zeros(3, np.float32)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                   np.zeros((0, 3)), np.zeros((0, N_SH_REST)))

    @classmethod
    def from_records(cls, records):
        records = list(records)
        if not records:
            return cls.empty()
        return cls(
            np.stack([r.position for r in records]),
            np.stack([r.log_scale for r in records]),
            np.stack([r.rot for r in records]),
            np.array([r.opacity_logit for r in records]),
            np.stack([r.sh_dc for r in records]),
            np.stack([r.sh_rest for r in records]),
        )

    @classmethod
    def concat(cls, scenes):
        scenes = [s for s in scenes if len(s)]
        if not scenes:
            return cls.empty()
        return cls(*(np.concatenate([getattr(s, f) for s in scenes]) for f in cls._fields()))

    @staticmethod
    def _fields():
        return ("positions", "log_scales", "rots", "opacity_logits", "sh_dc", "sh_rest")

    def __len__(self):
        return len(self.positions)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self._fields())

    def __repr__(self):
        return f"Scene(n={len(self)}, bbox_min={self.bbox_min.tolist()}, bbox_max={self.bbox_max.tolist()})"

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.bbox_max.astype(np.float64) - self.bbox_min))

    def record(self, i):
        return SplatRecord(self.positions[i].copy(), self.log_scales[i].copy(), self.rots[i].copy(),
                           float(self.opacity_logits[i]), self.sh_dc[i].copy(), self.sh_rest[i].copy())

    def records(self):
        return [self.record(i) for i in range(len(self))]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Scene(*(getattr(self, f)[idx] for f in self._fields()))

    def as_matrix(self):
        """(n, 62) float32 matrix in PLY property order, normals zero."""
        n = len(self)
        return np.concatenate([
            self.positions, np.zeros((n, 3), np.float32), self.sh_dc, self.sh_rest,
            self.opacity_logits[:, None], self.log_scales, self.rots,
        ], axis=1)


def _as_f32(a, shape):
    a = np.ascontiguousarray(a, dtype=np.float32)
    if a.shape != shape:
        a = a.reshape(shape)
    return a


# ---------------------------------------------------------------------------
# PLY I/O
# ---------------------------------------------------------------------------

def _parse_header(data):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("missing 'ply' magic or 'end_header'")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise ParseError("unterminated header")
    try:
        lines = data[:end].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError("non-ASCII header") from exc

    fmt = None
    elements = []  # [name, count, [(prop, dtype)], has_list]
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2:
                raise ParseError(f"bad format line: {line!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise ParseError(f"bad element line: {line!r}")
            elements.append([tok[1], int(tok[2]), [], False])
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before element")
            if len(tok) >= 2 and tok[1] == "list":
                elements[-1][3] = True
                continue
            if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                raise ParseError(f"bad property line: {line!r}")
            elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise ParseError(f"unexpected header line: {line!r}")
    if fmt != "binary_little_endian":
        raise ParseError(f"unsupported PLY format {fmt!r}; need binary_little_endian")
    return elements, nl + 1


def load_ply(data):
    """Parse a binary little-endian 3DGS PLY into a :class:`Scene`."""
    data = bytes(data)
    elements, offset = _parse_header(data)
    vertex = None
    for name, count, props, has_list in elements:
        if name == "vertex":
            vertex = (count, props, has_list)
            break
        if has_list:
            raise ParseError(f"cannot skip list element {name!r} preceding vertex data")
        offset += count * np.dtype(props).itemsize
    if vertex is None:
        raise ParseError("no vertex element")
    count, props, has_list = vertex
    if has_list:
        raise ParseError("vertex element has list properties")
    names = [p for p, _ in props]
    missing = [p for p in REQUIRED_PROPERTIES if p not in names]
    if missing:
        raise SchemaError(f"missing vertex properties: {', '.join(missing[:5])}"
                          + (" ..." if len(missing) > 5 else ""))
    dtype = np.dtype(props)
    if len(data) < offset + count * dtype.itemsize:
        raise ParseError(f"vertex data truncated: need {count * dtype.itemsize} bytes "
                         f"at offset {offset}, have {max(0, len(data) - offset)}")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)

    def cols(*keys):
        return np.stack([arr[k].astype(np.float32) for k in keys], axis=1) if count else \
            np.zeros((0, len(keys)), np.float32)

    positions = cols("x", "y", "z")
    sh_dc = cols(*(f"f_dc_{i}" for i in range(3)))
    sh_rest = cols(*(f"f_rest_{i}" for i in range(N_SH_REST)))
    opacity = cols("opacity")[:, 0]
    log_scales = cols(*(f"scale_{i}" for i in range(3)))
    rots = cols(*(f"rot_{i}" for i in range(4)))

    allvals = np.concatenate([positions, sh_dc, sh_rest, opacity[:, None], log_scales, rots], axis=1)
    bad = ~np.isfinite(allvals).all(axis=1)
    if bad.any():
        v = int(np.flatnonzero(bad)[0])
        raise DataError(f"non-finite value at vertex {v}", vertex=v)
    zero_rot = ~(rots.astype(np.float64) ** 2).sum(axis=1).astype(bool)
    if zero_rot.any():
        v = int(np.flatnonzero(zero_rot)[0])
        raise DataError(f"zero-norm quaternion at vertex {v}", vertex=v)
    return Scene(positions, log_scales, rots, opacity, sh_dc, sh_rest)


def ply_header(n):
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    lines += [f"property float {p}" for p in PLY_PROPERTIES]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def save_ply(scene):
    """Serialise a scene to the 62-property float32 PLY layout."""
    return ply_header(len(scene)) + scene.as_matrix().astype("<f4").tobytes()


def read_ply(path):
    with open(path, "rb") as fh:
        return load_ply(fh.read())


def write_ply(path, scene):
    with open(path, "wb") as fh:
        fh.write(save_ply(scene))


# ---------------------------------------------------------------------------
# Activation and geometry
# ---------------------------------------------------------------------------

def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quaternion_to_matrix(q):
    """Rotation matrices for (w, x, y, z) unit quaternions, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def normalize_quaternions(q):
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DataError("zero-norm quaternion")
    return q / norm


# Components this close to zero are rounding noise and do not decide a sign.
SIGN_TOLERANCE = 1e-9


def _canonical_sign(v):
    """Flip rows of unit vectors ``v`` so the first nonzero component is positive.

    A component counts as nonzero when its magnitude exceeds ``SIGN_TOLERANCE``.
    """
    nz = np.abs(v) > SIGN_TOLERANCE
    first = np.where(nz.any(axis=1), nz.argmax(axis=1), 0)
    sign = np.where(v[np.arange(len(v)), first] < 0, -1.0, 1.0)
    return v * sign[:, None]


def canonical_quaternions(q):
    """Unit quaternions with w >= 0 (first nonzero component positive when w == 0)."""
    return _canonical_sign(normalize_quaternions(np.atleast_2d(q)))


def activate(record):
    """Activated form of a single :class:`SplatRecord`."""
    rot = np.asarray(record.rot, dtype=np.float64)
    norm = np.linalg.norm(rot)
    if not norm > 0:
        raise DataError("zero-norm quaternion")
    return ActivatedSplat(
        position=np.asarray(record.position, dtype=np.float64),
        scale=np.exp(np.asarray(record.log_scale, dtype=np.float64)),
        rot_unit=rot / norm,
        opacity=float(sigmoid(record.opacity_logit)),
        rgb=0.5 + SH_C0 * np.asarray(record.sh_dc, dtype=np.float64),
        sh_rest=np.asarray(record.sh_rest, dtype=np.float64),
    )


def activate_scene(scene):
    sh_dc = scene.sh_dc.astype(np.float64)
    return ActivatedScene(
        positions=scene.positions.astype(np.float64),
        scales=np.exp(scene.log_scales.astype(np.float64)),
        rot_unit=normalize_quaternions(scene.rots) if len(scene) else np.zeros((0, 4)),
        opacity=sigmoid(scene.opacity_logits),
        rgb=0.5 + SH_C0 * sh_dc,
        sh_dc=sh_dc,
        sh_rest=scene.sh_rest.astype(np.float64),
    )


def principal_directions(scales, rot_unit):
    """Unit axis of largest scale per splat, sign-canonicalised.

    Ties between scale components resolve to the lowest axis index.
    """
    scales = np.atleast_2d(scales)
    if len(scales) == 0:
        return np.zeros((0, 3))
    R = quaternion_to_matrix(np.atleast_2d(rot_unit))
    axis = np.argmax(scales, axis=1)
    d = R[np.arange(len(axis)), :, axis]
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return _canonical_sign(d)


def principal_direction(splat):
    return principal_directions(splat.scale[None], splat.rot_unit[None])[0]


# ---------------------------------------------------------------------------
# Structure statistics
# ---------------------------------------------------------------------------

VOLUME_FLOOR = 1e-12
EIGEN_FLOOR = 1e-12


def subset_stats(scene, indices):
    """Count, density, PCA elongation and bbox volume of a subset of splats."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        raise InputError("subset_stats needs a non-empty index set")
    if idx.min() < 0 or idx.max() >= len(scene):
        raise InputError("index out of range")
    pts = scene.positions[idx].astype(np.float64)
    return positions_stats(pts)


def positions_stats(pts):
    pts = np.asarray(pts, dtype=np.float64)
    n = len(pts)
    if n == 0:
        raise InputError("positions_stats needs at least one point")
    extent = pts.max(axis=0) - pts.min(axis=0)
    volume = float(np.prod(extent))
    if n > 1:
        eig = np.sort(np.linalg.eigvalsh(np.cov(pts, rowvar=False)))[::-1]
    else:
        eig = np.zeros(3)
    elongation = max(eig[0], EIGEN_FLOOR) / max(eig[1], EIGEN_FLOOR)
    return SubsetStats(
        count=n,
        density=n / max(volume, VOLUME_FLOOR),
        elongation=float(elongation),
        spatial_volume=volume,
    )
