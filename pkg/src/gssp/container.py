"""Layered GSSP container: preamble, header with layer table, independent layer members.

Layer 0 carries the sketch section; every further layer carries a slice of
the patch splats, most important first. The shared patch codebooks travel
in layer 1 only, since any prefix that reaches a later patch layer includes
it. Each layer is deflated on its own (or stored raw when deflate does not
help) and protected by a CRC-32, so any prefix that ends on a layer
boundary decodes without the rest of the file.
The byte layout is documented in ``docs/format.md``.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, IncompleteError, InputError, VersionError
from .patch_codec import PatchPayload, dequantize_patch, importance_scores
from .sketch_codec import EncodedSketch, decode_sketch
from .splat_model import Scene

MAGIC = b"GSSP0002"
VERSION = 2
PREAMBLE = struct.Struct("<8sQ")
HEADER_FIXED = struct.Struct("<H6fH")
LAYER_ENTRY = struct.Struct("<BBQQQI")
U32 = struct.Struct("<I")

KIND_SKETCH = 0
KIND_PATCH = 1
CODEC_RAW = 0
CODEC_ZLIB = 1
ZLIB_LEVEL = 9
KIND_NAMES = {KIND_SKETCH: "sketch", KIND_PATCH: "patch"}


@dataclass(frozen=True)
class LayerPlan:
    """Cumulative patch fractions; patch splats are ranked by opacity x ellipsoid volume."""

    fractions: tuple = (0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        object.__setattr__(self, "fractions", f)
        if not f or f[-1] != 1.0:
            raise InputError("layer fractions must end at 1.0")
        if any(not 0 < x <= 1 for x in f) or any(b <= a for a, b in zip(f, f[1:])):
            raise InputError("layer fractions must be strictly increasing in (0, 1]")

    def boundaries(self, n):
        """Cumulative splat counts per patch layer (last one is exactly ``n``)."""
        b = [int(np.floor(x * n)) for x in self.fractions[:-1]] + [n]
        return b


@dataclass
class LayerEntry:
    kind: int
    codec: int
    offset: int
    length: int
    splat_count: int
    crc32: int

    @property
    def end(self):
        return self.offset + self.length


@dataclass
class ContainerHeader:
    version: int
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    layers: list
    extension: bytes = b""
    header_end: int = field(default=0, compare=False)

    @property
    def layer_count(self):
        return len(self.layers)

    def cumulative_counts(self):
        return np.cumsum([e.splat_count for e in self.layers]).tolist()


def importance_order(payload):
    """Patch rows sorted by descending importance, ties by ascending row."""
    score = importance_scores(payload)
    return np.lexsort((np.arange(len(score)), -score))


def _member(raw):
    packed = zlib.compress(raw, ZLIB_LEVEL)
    if len(packed) < len(raw):
        return CODEC_ZLIB, packed
    return CODEC_RAW, raw


def pack(sketch, payload, plan=None, bbox=None, extension=b""):
    """Serialize the sketch and (layer-sliced) patch payload into container bytes.

    Patch layer ``i`` holds the splats ranked between fractions ``i-1`` and
    ``i``; a slice that rounds to zero splats gets no layer.

    ``bbox`` is ``(min_xyz, max_xyz)``; ``extension`` is free-form metadata
    (the encoder stores its configuration there).
    """
    plan = plan or LayerPlan()
    if bbox is None:
        bbox = (np.zeros(3), np.zeros(3))
    if isinstance(extension, str):
        extension = extension.encode("utf-8")
    layers = [(KIND_SKETCH, sketch.n_splats, sketch.to_bytes())]
    n = len(payload) if payload is not None else 0
    if n:
        order = importance_order(payload)
        start = 0
        for stop in plan.boundaries(n):
            if stop == start:
                continue  # empty slices are dropped so every layer adds splats
            part = payload.subset(order[start:stop])
            layers.append((KIND_PATCH, stop - start, part.to_bytes(with_codebooks=len(layers) == 1)))
            start = stop
    members = [(kind, count) + _member(raw) for kind, count, raw in layers]

    header_len = (HEADER_FIXED.size + LAYER_ENTRY.size * len(members) + U32.size
                  + len(extension) + U32.size)
    offset = PREAMBLE.size + header_len
    entries = []
    for kind, count, codec, data in members:
        entries.append(LAYER_ENTRY.pack(kind, codec, offset, len(data), count, zlib.crc32(data)))
        offset += len(data)
    lo, hi = (np.asarray(b, dtype=np.float32) for b in bbox)
    header = b"".join([HEADER_FIXED.pack(VERSION, *lo.tolist(), *hi.tolist(), len(members)),
                       *entries, U32.pack(len(extension)), extension])
    header += U32.pack(zlib.crc32(header))
    body = header + b"".join(m[3] for m in members)
    return PREAMBLE.pack(MAGIC, len(body)) + body


def _need(data, n, what):
    if len(data) < n:
        raise IncompleteError(f"incomplete {what}", n, len(data))


def read_header(data, strict=True):
    """Parse the preamble and header.

    With ``strict`` the preamble length must match the data exactly (whole
    file). Otherwise ``data`` may be any prefix covering the header.
    """
    data = memoryview(data)
    if len(data) >= 8 and bytes(data[:8]) != MAGIC:
        raise FormatError("not a GSSP container", offset=0)
    _need(data, PREAMBLE.size, "preamble")
    _, body_len = PREAMBLE.unpack_from(data, 0)
    total = PREAMBLE.size + body_len
    if strict and len(data) != total:
        raise FormatError(f"container length mismatch: expected {total} bytes, found {len(data)}")
    if len(data) > total:
        raise FormatError(f"container length mismatch: expected {total} bytes, found {len(data)}")
    pos = PREAMBLE.size
    _need(data, pos + HEADER_FIXED.size, "header")
    fixed = HEADER_FIXED.unpack_from(data, pos)
    version, bbox, count = fixed[0], np.array(fixed[1:7], np.float32), fixed[7]
    if version != VERSION:
        raise VersionError(f"unsupported container version {version}", offset=pos)
    pos += HEADER_FIXED.size
    _need(data, pos + LAYER_ENTRY.size * count + U32.size, "layer table")
    raw_entries = [LAYER_ENTRY.unpack_from(data, pos + i * LAYER_ENTRY.size) for i in range(count)]
    pos += LAYER_ENTRY.size * count
    ext_len = U32.unpack_from(data, pos)[0]
    pos += U32.size
    _need(data, pos + ext_len + U32.size, "header extension")
    extension = bytes(data[pos:pos + ext_len])
    pos += ext_len
    crc = U32.unpack_from(data, pos)[0]
    if zlib.crc32(data[PREAMBLE.size:pos]) != crc:
        raise FormatError("header checksum mismatch", offset=pos)
    pos += U32.size

    layers = [LayerEntry(*e) for e in raw_entries]
    if count < 1 or layers[0].kind != KIND_SKETCH or any(e.kind != KIND_PATCH for e in layers[1:]):
        raise FormatError("layer table must hold one sketch layer followed by patch layers")
    expect = pos
    for i, e in enumerate(layers):
        if e.codec not in (CODEC_RAW, CODEC_ZLIB):
            raise FormatError(f"unknown codec {e.codec} in layer {i}")
        if i and e.splat_count == 0:
            raise FormatError(f"patch layer {i} is empty")
        if e.offset != expect:
            raise FormatError(f"layer {i} offset {e.offset} does not follow the previous section")
        expect = e.end
    if expect != total:
        raise FormatError(f"layer table covers {expect} bytes but container has {total}")
    return ContainerHeader(version, bbox[:3], bbox[3:], layers, extension, pos)


def _layer_bytes(data, header, i):
    e = header.layers[i]
    _need(data, e.end, f"layer {i}")
    raw = bytes(data[e.offset:e.end])
    if zlib.crc32(raw) != e.crc32:
        raise FormatError(f"checksum mismatch in layer {i}", offset=e.offset)
    if e.codec == CODEC_ZLIB:
        try:
            raw = zlib.decompress(raw)
        except zlib.error as exc:
            raise FormatError(f"corrupt layer {i}: {exc}", offset=e.offset) from None
    return raw


def _decode_layer(data, header, i, codebooks=None):
    raw = _layer_bytes(data, header, i)
    e = header.layers[i]
    if e.kind == KIND_SKETCH:
        obj = EncodedSketch.from_bytes(raw)
    else:
        obj = PatchPayload.from_bytes(raw, codebooks=codebooks if i > 1 else None)
    count = obj.n_splats if e.kind == KIND_SKETCH else len(obj)
    if count != e.splat_count:
        raise FormatError(f"layer {i} holds {count} splats, table says {e.splat_count}", offset=e.offset)
    return obj


def unpack(data):
    """Inverse of :func:`pack`: ``(EncodedSketch, [PatchPayload, ...], ContainerHeader)``."""
    header = read_header(data, strict=True)
    sketch = _decode_layer(data, header, 0)
    return sketch, _decode_patch_layers(data, header, header.layer_count - 1), header


def _decode_patch_layers(data, header, upto_layer):
    patches = []
    for i in range(1, upto_layer + 1):
        books = patches[0].codebooks if patches else None
        patches.append(_decode_layer(data, header, i, books))
    return patches


def bytes_needed(header, upto_layer):
    return header.layers[upto_layer].end


def assemble_prefix(data, upto_layer=None):
    """Decode the sketch plus patch layers ``1..upto_layer`` from a (possibly partial) file."""
    header = read_header(data, strict=False)
    if upto_layer is None:
        upto_layer = header.layer_count - 1
    if not 0 <= upto_layer < header.layer_count:
        raise InputError(f"layer {upto_layer} out of range (container has {header.layer_count})")
    _need(data, bytes_needed(header, upto_layer), f"data for layer {upto_layer}")
    sketch = _decode_layer(data, header, 0)
    scenes = [decode_sketch(sketch)]
    scenes += [dequantize_patch(p) for p in _decode_patch_layers(data, header, upto_layer)]
    return Scene.concat(scenes)


def decode_container(data):
    return assemble_prefix(data, None)
