"""Compare the compiled and numpy kernel backends, then time one full encode.

Usage: python benchmarks/bench_kernels.py [--n 200000] [--repeat 5] [--skip-encode]
"""
import argparse
import time
import timeit

import numpy as np

from gssp import kernels
from gssp.clustering import ClusterFeatures, ClusterParams, SpatialIndex, neighbor_graph
from gssp.config import Config
from gssp.pipeline import encode_scene
from gssp.splat_model import activate_scene
from gssp.synthetic import synthetic_scene


def workloads(n, rng):
    q = rng.integers(0, 1 << 16, (n, 3))
    deltas = rng.integers(-2000, 2000, 3 * n)
    blob = kernels.encode_varints(deltas)
    values = rng.normal(size=n)
    book = np.sort(rng.normal(size=256))
    s = synthetic_scene(1, n_clusters=20, per_cluster=min(n // 40, 2000), n_background=min(n // 4, 20000))
    f = ClusterFeatures.from_activated(activate_scene(s.scene))
    indptr, indices = neighbor_graph(f, SpatialIndex(f.positions), ClusterParams.for_diagonal(s.scene.diagonal))
    core = (np.diff(indptr) >= 8).astype(np.uint8)
    return {
        "morton_codes": lambda m: m.morton_codes(q),
        "encode_varints": lambda m: m.encode_varints(deltas),
        "decode_varints": lambda m: m.decode_varints(blob, 0, len(deltas)),
        "nearest_sorted": lambda m: m.nearest_sorted(values, book),
        "expand_clusters": lambda m: m.expand_clusters(indptr, indices, core),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-encode", action="store_true")
    args = ap.parse_args()

    backends = kernels.backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(sorted(backends))}")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in sorted(backends)) + f"{'speedup':>10}")
    for name, fn in workloads(args.n, rng).items():
        best = {b: min(timeit.repeat(lambda m=m: fn(m), number=1, repeat=args.repeat))
                for b, m in sorted(backends.items())}
        speed = best["python"] / best["cython"] if "cython" in best else float("nan")
        print(f"{name:<18}" + "".join(f"{best[b] * 1e3:>10.2f}ms" for b in sorted(best)) + f"{speed:>9.1f}x")

    if not args.skip_encode:
        s = synthetic_scene(0, n_clusters=40, per_cluster=1000, n_background=10_000)
        t = time.perf_counter()
        res = encode_scene(s.scene, Config(downsample=10))
        dt = time.perf_counter() - t
        r = res.report
        print(f"encode {r['splats']} splats: {dt:.2f}s, {r['input_bytes']} -> {r['output_bytes']} bytes "
              f"({r['ratio']:.1f}x), sketch {r['sketch_splats']}")


if __name__ == "__main__":
    main()
