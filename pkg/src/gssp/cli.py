"""``gssp`` command line: encode, decode, stats, layers, inspect.

Machine-readable reports go to stdout as JSON lines; human summaries go to
stderr. Exit codes: 0 ok, 2 usage, 3 incomplete input, 4 format error,
5 data error.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import Config, parse_config_text
from .container import KIND_NAMES, assemble_prefix, read_header, unpack
from .errors import (DataError, FormatError, GsspError, IncompleteError, InputError, ParseError,
                     SchemaError)
from .halffloat import from_half
from .patch_codec import import_retrained_patch
from .pipeline import encode_scene
from .refine import categorize
from .splat_model import load_ply, save_ply, subset_stats

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INCOMPLETE = 3
EXIT_FORMAT = 4
EXIT_DATA = 5

# Flags that map one-to-one onto Config keys.
CONFIG_FLAGS = ("seed", "eps_spatial", "eps_direction", "eps_color", "min_samples", "tau_max",
                "beta", "s_min", "t_max", "downsample", "fractions")


def emit(record, out=None):
    out = out or sys.stdout
    out.write(json.dumps(record, sort_keys=True) + "\n")


def say(msg):
    sys.stderr.write(msg + "\n")


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def build_config(args):
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = Config()
    if getattr(args, "config", None):
        cfg = cfg.replace(**parse_config_text(_read(args.config).decode("utf-8")))
    flags = {k: getattr(args, k) for k in CONFIG_FLAGS if getattr(args, k, None) is not None}
    return cfg.replace(**flags)


def _is_container(data):
    return data[:4] == b"GSSP"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_encode(args):
    cfg = build_config(args)
    data = _read(args.input)
    scene = load_ply(data)
    patch = import_retrained_patch(_read(args.patch_ply)) if args.patch_ply else None
    res = encode_scene(scene, cfg, jobs=args.jobs, patch_scene=patch, input_bytes=len(data))
    with open(args.output, "wb") as fh:
        fh.write(res.data)
    r = res.report
    emit({"event": "categories", "splats": r["splats"], "sketch": r["sketch_splats"],
          "sketch_clusters": r["sketch_clusters"], "patch": r["patch_splats"],
          "patch_retained": r["patch_retained"]})
    emit({"event": "stages", **{k[6:]: v for k, v in r.items() if k.startswith("stage_")}})
    header = read_header(res.data)
    for i, e in enumerate(header.layers):
        emit({"event": "section", "layer": i, "kind": KIND_NAMES[e.kind], "bytes": e.length,
              "splats": e.splat_count})
    emit({"event": "sketch_parts", "coefficient_bytes": r["sketch_coefficient_bytes"],
          "position_bytes": r["sketch_position_bytes"]})
    emit({"event": "summary", "input_bytes": r["input_bytes"], "output_bytes": r["output_bytes"],
          "ratio": round(r["ratio"], 4)})
    say(f"encoded {r['splats']} splats: {r['sketch_splats']} sketch in {r['sketch_clusters']} "
        f"clusters, {r['patch_retained']}/{r['patch_splats']} patch kept; "
        f"{r['input_bytes']} -> {r['output_bytes']} bytes ({r['ratio']:.1f}x)")
    return EXIT_OK


def cmd_decode(args):
    data = _read(args.input)
    scene = assemble_prefix(data, args.layer)
    out = save_ply(scene)
    with open(args.output, "wb") as fh:
        fh.write(out)
    emit({"event": "decoded", "splats": len(scene), "layer": args.layer, "bytes": len(out)})
    say(f"decoded {len(scene)} splats to {args.output}")
    return EXIT_OK


def _stats_record(category, scene, indices):
    if len(indices) == 0:
        return {"event": "stats", "category": category, "count": 0, "density": 0.0,
                "elongation": 0.0, "spatial_volume": 0.0}
    s = subset_stats(scene, indices)
    return {"event": "stats", "category": category, "count": s.count,
            "density": float(s.density), "elongation": float(s.elongation),
            "spatial_volume": float(s.spatial_volume)}


def cmd_stats(args):
    data = _read(args.input)
    if _is_container(data):
        sketch, patches, header = unpack(data)
        scene = assemble_prefix(data)
        n_sketch = header.layers[0].splat_count
        n = len(scene)
        emit(_stats_record("sketch", scene, np.arange(n_sketch)))
        emit(_stats_record("patch", scene, np.arange(n_sketch, n)))
        parts = sketch.size_breakdown()
        emit({"event": "bytes", "section": "sketch_coefficients", "bytes": parts["coefficients"]})
        emit({"event": "bytes", "section": "sketch_positions", "bytes": parts["positions"]})
        emit({"event": "bytes", "section": "sketch_layer", "bytes": header.layers[0].length})
        emit({"event": "bytes", "section": "patch_layers",
              "bytes": int(sum(e.length for e in header.layers[1:]))})
        emit({"event": "bytes", "section": "header", "bytes": header.header_end})
        emit({"event": "bytes", "section": "total", "bytes": len(data)})
        say(f"container: {n_sketch} sketch + {n - n_sketch} patch splats, {len(data)} bytes")
        return EXIT_OK
    cfg = build_config(args)
    scene = load_ply(data)
    cat = categorize(scene, cfg.cluster_params(scene.diagonal), cfg.refine_params(), jobs=args.jobs)
    emit(_stats_record("sketch", scene, cat.sketch_indices()))
    emit(_stats_record("patch", scene, cat.patch_indices))
    emit({"event": "bytes", "section": "input", "bytes": len(data)})
    say(f"ply: {cat.n_sketch} sketch / {len(cat.patch_indices)} patch splats")
    return EXIT_OK


def cmd_layers(args):
    data = _read(args.input)
    header = read_header(data, strict=False)
    emit({"event": "header", "version": header.version, "layer_count": header.layer_count,
          "bbox_min": [float(v) for v in header.bbox_min],
          "bbox_max": [float(v) for v in header.bbox_max],
          "config": header.extension.decode("utf-8", "replace")})
    total = 0
    for i, (e, cum) in enumerate(zip(header.layers, header.cumulative_counts())):
        total = e.end
        emit({"event": "layer", "index": i, "kind": KIND_NAMES[e.kind], "offset": e.offset,
              "bytes": e.length, "splats": e.splat_count, "cumulative_splats": cum,
              "cumulative_bytes": total, "codec": "zlib" if e.codec else "raw",
              "crc32": f"{e.crc32:08x}"})
    say(f"{header.layer_count} layers, {total} bytes")
    return EXIT_OK


def cmd_inspect(args):
    data = _read(args.input)
    sketch, _, _ = unpack(data)
    if not 0 <= args.cluster < len(sketch.clusters):
        raise InputError(f"cluster {args.cluster} out of range (sketch has {len(sketch.clusters)})")
    c = sketch.clusters[args.cluster]
    lo, hi = c.bounds
    emit({"event": "cluster", "index": args.cluster, "members": c.member_count,
          "norm_min": lo.tolist(), "norm_max": hi.tolist(), "degrees": c.degrees})
    for kind, bits in c.coeff_bits.items():
        emit({"event": "model", "attribute": kind, "degree": c.degrees[kind],
              "shape": list(bits.shape), "coefficients": from_half(bits).tolist()})
    say(f"cluster {args.cluster}: {c.member_count} splats, degrees {c.degrees}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", help="flat 'key = value' configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps-spatial", type=float)
    p.add_argument("--eps-direction", type=float)
    p.add_argument("--eps-color", type=float)
    p.add_argument("--min-samples", type=int)
    p.add_argument("--tau-max", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--s-min", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--downsample", type=int)
    p.add_argument("--fractions", help="comma separated cumulative patch fractions, ending at 1")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (output is unaffected)")


def build_parser():
    parser = argparse.ArgumentParser(prog="gssp", description="Sketch/patch Gaussian splat codec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="compress a 3DGS PLY into a .gssp container")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--patch-ply", help="retrained patch splats replacing the pruned patch set")
    _add_config_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a container (or a prefix of it) to PLY")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--layer", type=int, default=None, help="last layer to include (default: all)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("stats", help="category statistics of a PLY or container")
    p.add_argument("input")
    _add_config_flags(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("layers", help="print the container layer table")
    p.add_argument("input")
    p.set_defaults(func=cmd_layers)

    p = sub.add_parser("inspect", help="dump one sketch cluster's models")
    p.add_argument("input")
    p.add_argument("--cluster", type=int, default=0)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except IncompleteError as exc:
        say(f"error: {exc}")
        return EXIT_INCOMPLETE
    except FormatError as exc:
        say(f"error: {exc}")
        return EXIT_FORMAT
    except (DataError, ParseError, SchemaError) as exc:
        say(f"error: {exc}")
        return EXIT_DATA
    except (InputError, OSError) as exc:
        say(f"error: {exc}")
        return EXIT_USAGE
    except GsspError as exc:
        say(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
