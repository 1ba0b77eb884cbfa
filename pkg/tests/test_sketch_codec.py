import struct
import zlib

import numpy as np
import pytest

from gssp.errors import FormatError
from gssp.halffloat import round_half, to_half
from gssp.pipeline import sketch_decoded_mse
from gssp.polyfit import ATTRIBUTE_DIMS, ATTRIBUTE_KINDS, fit_cluster, grid_search_fit, normalization_bounds
from gssp.refine import categorize
from gssp.sketch_codec import (GRID_CELLS, EncodedSketch, SketchCluster, compress_positions,
                               decode_sketch, decode_sketch_attributes, decompress_positions,
                               encode_cluster, encode_sketch, grid_bounds, quantize_positions)
from gssp.splat_model import Scene, activate_scene
from gssp.synthetic import synthetic_scene
from oracles import morton_oracle


def line_clusters(rng, n_lines, per_line, length):
    pts = []
    for _ in range(n_lines):
        c = rng.uniform(length, 1 - length, 3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        t = rng.uniform(-length / 2, length / 2, per_line)
        pts.append(c + np.outer(t, d))
    return np.vstack(pts), [per_line] * n_lines


def test_round_trip_quantized_and_morton_sorted(rng):
    P = rng.uniform(-3, 5, (500, 3))
    counts = [100, 0, 250, 150]
    lo, hi = P.min(0), P.max(0)
    blob, order = compress_positions(P, counts, lo, hi)
    back, got_counts, q = decompress_positions(blob)
    np.testing.assert_array_equal(got_counts, counts)
    glo, ghi = grid_bounds(lo, hi)
    np.testing.assert_array_equal(q, quantize_positions(P[order], glo, ghi))
    assert sorted(order.tolist()) == list(range(500))
    # Within each cluster, storage order follows the Morton code; clusters keep their rows.
    start = 0
    for c in counts:
        assert set(order[start:start + c]) == set(range(start, start + c))
        codes = [morton_oracle(*map(int, r)) for r in q[start:start + c]]
        assert codes == sorted(codes)
        start += c


def test_position_error_bound(rng):
    P = rng.uniform(0, [1, 10, 0.01], (20_000, 3))
    blob, order = compress_positions(P, [len(P)], P.min(0), P.max(0))
    back, _, _ = decompress_positions(blob)
    ext = P.max(0) - P.min(0)
    assert (np.abs(back - P[order]) <= ext / GRID_CELLS).all()


def test_single_point_at_bbox_min_goes_to_cell_centre():
    lo, hi = np.zeros(3), np.array([2.0, 4.0, 8.0])
    blob, _ = compress_positions(lo[None], [1], lo, hi)
    back, _, q = decompress_positions(blob)
    np.testing.assert_array_equal(q, [[0, 0, 0]])
    np.testing.assert_allclose(back[0], lo + 0.5 * (hi - lo) / GRID_CELLS)


def test_bbox_max_lands_in_last_cell():
    lo, hi = np.zeros(3), np.ones(3)
    _, _, q = decompress_positions(compress_positions(hi[None], [1], lo, hi)[0])
    np.testing.assert_array_equal(q, [[GRID_CELLS - 1] * 3])


def test_degenerate_axis_widened():
    P = np.array([[0.0, 1.0, 5.0], [1.0, 1.0, 5.0]])
    blob, _ = compress_positions(P, [2], P.min(0), P.max(0))
    back, _, _ = decompress_positions(blob)
    assert np.abs(back[:, 1:] - P[:, 1:]).max() <= 2e-9 / GRID_CELLS


def test_empty_cluster_list():
    blob, order = compress_positions(np.zeros((0, 3)), [], np.zeros(3), np.ones(3))
    back, counts, _ = decompress_positions(blob)
    assert back.shape == (0, 3) and len(counts) == 0 and len(order) == 0
    sk = encode_sketch([], synthetic_scene(0, n_clusters=1).scene)
    again = EncodedSketch.from_bytes(sk.to_bytes())
    assert again.n_splats == 0 and len(decode_sketch(again)) == 0


def test_line_clusters_under_two_bytes_per_splat():
    rng = np.random.default_rng(0)
    P, counts = line_clusters(rng, 100, 1000, 0.1)
    blob, _ = compress_positions(P, counts, np.zeros(3), np.ones(3))
    assert len(blob) / len(P) <= 2.0
    assert 12 * len(P) / len(blob) >= 6


@pytest.mark.parametrize("cut", [0, 5, 40, -1])
def test_truncated_position_stream(cut, rng):
    P = rng.uniform(0, 1, (50, 3))
    blob, _ = compress_positions(P, [50], np.zeros(3), np.ones(3))
    with pytest.raises(FormatError):
        decompress_positions(blob[:cut])


def test_corrupt_position_body_reports_offset(rng):
    P = rng.uniform(0, 1, (50, 3))
    body = zlib.decompress(compress_positions(P, [50], np.zeros(3), np.ones(3))[0])
    with pytest.raises(FormatError) as exc:
        decompress_positions(zlib.compress(body + b"\x00"))
    assert exc.value.offset == len(body)
    bad_bbox = struct.pack("<6d", 0, 0, 0, -1, 1, 1) + body[48:]
    with pytest.raises(FormatError):
        decompress_positions(zlib.compress(bad_bbox))
    with pytest.raises(FormatError):
        decompress_positions(zlib.compress(body[:-1] + b"\xff"))


def test_random_coefficient_blocks_compress_twofold():
    rng = np.random.default_rng(0)
    clusters = []
    for _ in range(40):
        degs = {k: int(rng.integers(1, 5)) for k in ATTRIBUTE_KINDS}
        coeff = {k: rng.normal(0, 0.1, ((degs[k] + 1) * (degs[k] + 2) * (degs[k] + 3) // 6,
                                         ATTRIBUTE_DIMS[k])) for k in ATTRIBUTE_KINDS}
        clusters.append(SketchCluster(degs, {k: to_half(v) for k, v in coeff.items()},
                                      to_half(np.array([0, 0, 0, 1, 1, 1.0])), 100))
    sk = EncodedSketch(clusters, b"")
    raw32 = 4 * sum(c.n_coefficients for c in clusters)
    assert raw32 / sk.size_breakdown()["coefficients"] >= 2.0


def _cluster_scene(seed=3, n=1000):
    s = synthetic_scene(seed, n_clusters=1, per_cluster=n, n_background=0)
    return s.scene, activate_scene(s.scene)


def test_attribute_side_reduction_over_tenfold():
    scene, act = _cluster_scene()
    m = fit_cluster(act, np.arange(len(act)))
    sk = encode_sketch([m], scene)
    raw_attrs = len(act) * 56 * 4
    assert raw_attrs / sk.size_breakdown()["coefficients"] >= 10


def test_constant_cluster_survives_up_to_half():
    n = 200
    rng = np.random.default_rng(1)
    pos = rng.uniform(0, 1, (n, 3))
    scene = Scene(pos, np.full((n, 3), -4.0), np.tile([0.9, 0.1, -0.2, 0.3], (n, 1)), np.full(n, 0.7),
                  np.full((n, 3), 0.2), np.full((n, 45), -0.05))
    act = activate_scene(scene)
    m = fit_cluster(act, np.arange(n))
    sk = EncodedSketch.from_bytes(encode_sketch([m], scene).to_bytes())
    _, attrs = decode_sketch_attributes(sk)
    rel = 2.0 ** -10
    np.testing.assert_allclose(attrs["scaling"], act.scales, rtol=rel)
    np.testing.assert_allclose(attrs["opacity"][:, 0], act.opacity, rtol=rel)
    np.testing.assert_allclose(attrs["color"][:, :3], round_half(act.sh_dc), rtol=rel, atol=1e-6)
    np.testing.assert_allclose(np.abs(attrs["rotation"] @ act.rot_unit[0]), 1.0, atol=1e-3)


def test_decode_count_and_structure(small_synthetic):
    cat = categorize(small_synthetic.scene)
    sk = encode_sketch(cat.sketch_clusters, small_synthetic.scene)
    back = EncodedSketch.from_bytes(sk.to_bytes())
    assert back.n_splats == cat.n_sketch
    assert len(decode_sketch(back)) == sum(c.member_count for c in back.clusters)
    for c in back.clusters:
        for k in ATTRIBUTE_KINDS:
            d = c.degrees[k]
            assert c.coeff_bits[k].shape == ((d + 1) * (d + 2) * (d + 3) // 6, ATTRIBUTE_DIMS[k])
    np.testing.assert_array_equal(np.sort(sk.source_indices), np.sort(cat.sketch_indices()))


def test_decoded_mse_within_ten_percent(small_synthetic):
    cat = categorize(small_synthetic.scene)
    sk = encode_sketch(cat.sketch_clusters, small_synthetic.scene)
    dec = sketch_decoded_mse(small_synthetic.scene, sk, cat.sketch_clusters)
    fit = np.array([c.mse_combined for c in cat.sketch_clusters])
    assert dec.sum() <= 1.1 * fit.sum()


def test_coefficient_share_below_half():
    s = synthetic_scene(1, n_clusters=10, per_cluster=2000, n_background=500)
    cat = categorize(s.scene)
    sizes = encode_sketch(cat.sketch_clusters, s.scene).size_breakdown()
    assert sizes["coefficients"] < sizes["positions"]


def test_reencoding_is_idempotent(small_synthetic):
    cat = categorize(small_synthetic.scene)
    sk = EncodedSketch.from_bytes(encode_sketch(cat.sketch_clusters, small_synthetic.scene).to_bytes())
    positions, counts, _ = decompress_positions(sk.positions_blob)
    lo, hi = np.array(struct.unpack_from("<6d", zlib.decompress(sk.positions_blob))).reshape(2, 3)
    blob, order = compress_positions(positions, counts, lo, hi)
    assert blob == sk.positions_blob
    np.testing.assert_array_equal(order, np.arange(len(positions)))
    rebuilt = EncodedSketch([SketchCluster(c.degrees, c.coeff_bits, c.bounds_bits, c.member_count)
                             for c in sk.clusters], blob)
    assert rebuilt.to_bytes() == sk.to_bytes()


def test_encode_cluster_uses_half_bounds(rng):
    X = rng.uniform(0, 1, (60, 3))
    attrs = {k: rng.normal(size=(60, ATTRIBUTE_DIMS[k])) for k in ATTRIBUTE_KINDS}
    lo, hi = normalization_bounds(X * 3.3 + 0.01)
    m = grid_search_fit(X, attrs, bounds=(lo, hi))
    c = encode_cluster(m)
    np.testing.assert_array_equal(c.bounds[0], lo)
    np.testing.assert_array_equal(c.bounds[1], hi)


@pytest.mark.parametrize("mutate", ["truncate", "trailing", "bad_zlib", "count"])
def test_sketch_section_corruption(mutate, small_synthetic):
    cat = categorize(small_synthetic.scene)
    data = bytearray(encode_sketch(cat.sketch_clusters, small_synthetic.scene).to_bytes())
    if mutate == "truncate":
        data = data[:-3]
    elif mutate == "trailing":
        data += b"\x00"
    elif mutate == "bad_zlib":
        data[10] ^= 0xFF
    else:
        data[0] += 1
    with pytest.raises(FormatError):
        sk = EncodedSketch.from_bytes(bytes(data))
        decode_sketch(sk)
