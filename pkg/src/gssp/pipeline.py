"""End-to-end encode: categorise, encode sketch, prune and quantise patch, pack."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .config import Config
from .container import pack
from .patch_codec import prune_uniform, quantize_patch
from .polyfit import ATTRIBUTE_KINDS, attribute_matrices, combined_mse
from .refine import categorize
from .sketch_codec import decode_sketch_attributes, encode_sketch
from .splat_model import RECORD_BYTES, activate_scene, canonical_quaternions, ply_header


@dataclass
class EncodeResult:
    data: bytes
    categorization: object
    sketch: object
    payload: object
    patch_scene: object
    report: dict


def encode_scene(scene, config=None, jobs=1, patch_scene=None, input_bytes=None):
    """Run the full encoder on a :class:`Scene`.

    ``patch_scene`` replaces the pruned patch splats (retrained import hook).
    BLAS is pinned to one thread so results do not depend on ``jobs`` or on
    the machine's core count; ``jobs`` only parallelises independent clusters.
    """
    config = config or Config()
    with threadpool_limits(limits=1, user_api="blas"):
        cat = categorize(scene, config.cluster_params(scene.diagonal), config.refine_params(),
                         jobs=jobs)
        sketch = encode_sketch(cat.sketch_clusters, scene)
        pruned = prune_uniform(cat.patch_indices, config.prune_spec())
        if patch_scene is None:
            patch_scene = scene.subset(pruned)
        payload = quantize_patch(patch_scene, seed=config.codebook_seed)
        data = pack(sketch, payload, config.layer_plan(), (scene.bbox_min, scene.bbox_max),
                    extension=config.to_text())

    if input_bytes is None:
        input_bytes = len(ply_header(len(scene))) + RECORD_BYTES * len(scene)
    parts = sketch.size_breakdown()
    report = {
        "splats": len(scene),
        "sketch_splats": cat.n_sketch,
        "sketch_clusters": len(cat.sketch_clusters),
        "patch_splats": int(len(cat.patch_indices)),
        "patch_retained": len(patch_scene),
        "input_bytes": int(input_bytes),
        "output_bytes": len(data),
        "sketch_coefficient_bytes": parts["coefficients"],
        "sketch_position_bytes": parts["positions"],
        "ratio": input_bytes / len(data),
        **{f"stage_{k}": v for k, v in cat.stats.items()},
    }
    return EncodeResult(data, cat, sketch, payload, patch_scene, report)


def sketch_decoded_mse(scene, sketch, clusters):
    """Per-cluster combined MSE of decoded sketch splats against their originals.

    Errors are measured in the fitting space (activated attributes, canonical
    quaternions), so they are directly comparable to each cluster's stored MSE.
    """
    positions, attrs = decode_sketch_attributes(sketch)
    act = activate_scene(scene)
    targets = attribute_matrices(act, sketch.source_indices)
    out, start = [], 0
    for c in clusters:
        sl = slice(start, start + len(c))
        decoded = {k: attrs[k][sl] for k in ATTRIBUTE_KINDS}
        decoded["rotation"] = canonical_quaternions(decoded["rotation"])
        mse = {k: float(((decoded[k] - targets[k][sl]) ** 2).sum() / len(c)) for k in ATTRIBUTE_KINDS}
        out.append(combined_mse(mse))
        start += len(c)
    return np.array(out)

