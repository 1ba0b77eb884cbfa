import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gssp.errors import DataError, InputError, ParseError, SchemaError
from gssp.splat_model import (PLY_PROPERTIES, RECORD_BYTES, SH_C0, Scene, SplatRecord, activate,
                              activate_scene, load_ply, principal_direction, principal_directions,
                              save_ply, subset_stats)
from gssp.synthetic import random_scene
from oracles import principal_direction_oracle


def _ply(rows, props=PLY_PROPERTIES, extra_header=""):
    head = ["ply", "format binary_little_endian 1.0", "comment made by a test"]
    head += [extra_header] if extra_header else []
    head += [f"element vertex {len(rows)}"] + [f"property float {p}" for p in props] + ["end_header"]
    body = np.asarray(rows, dtype="<f4").reshape(len(rows), len(props)).tobytes()
    return ("\n".join(head) + "\n").encode() + body


def _row(pos=(0, 0, 0), opacity=0.0, rot=(1, 0, 0, 0)):
    r = dict.fromkeys(PLY_PROPERTIES, 0.0)
    r.update(x=pos[0], y=pos[1], z=pos[2], opacity=opacity)
    for i, v in enumerate(rot):
        r[f"rot_{i}"] = v
    return [r[p] for p in PLY_PROPERTIES]


def test_property_layout():
    assert len(PLY_PROPERTIES) == 62
    assert RECORD_BYTES == 248
    assert PLY_PROPERTIES[:6] == ("x", "y", "z", "nx", "ny", "nz")
    assert PLY_PROPERTIES[-4:] == ("rot_0", "rot_1", "rot_2", "rot_3")


def test_two_vertex_bbox():
    s = load_ply(_ply([_row((0, 0, 0)), _row((1, 1, 1))]))
    assert len(s) == 2
    np.testing.assert_array_equal(s.bbox_min, [0, 0, 0])
    np.testing.assert_array_equal(s.bbox_max, [1, 1, 1])


def test_nan_opacity_names_vertex():
    rows = [_row() for _ in range(10)]
    rows[7][PLY_PROPERTIES.index("opacity")] = np.nan
    with pytest.raises(DataError) as exc:
        load_ply(_ply(rows))
    assert exc.value.vertex == 7


def test_zero_quaternion_rejected():
    with pytest.raises(DataError):
        load_ply(_ply([_row(rot=(0, 0, 0, 0))]))


def test_missing_property_is_schema_error():
    props = tuple(p for p in PLY_PROPERTIES if p != "scale_1")
    rows = [[0.0] * len(props)]
    with pytest.raises(SchemaError):
        load_ply(_ply(rows, props))


def test_normals_optional_and_property_order_free():
    props = tuple(p for p in PLY_PROPERTIES if p not in ("nx", "ny", "nz"))[::-1]
    vals = np.arange(len(props), dtype=np.float32) * 0.01 + 0.5
    s = load_ply(_ply([vals], props))
    assert s.sh_rest[0, 0] == np.float32(vals[props.index("f_rest_0")])
    assert s.rots[0, 3] == np.float32(vals[props.index("rot_3")])


@pytest.mark.parametrize("blob", [b"", b"plx\n", b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n",
                                  b"ply\nformat binary_little_endian 1.0\nelement vertex x\nend_header\n"])
def test_malformed_header(blob):
    with pytest.raises(ParseError):
        load_ply(blob)


def test_truncated_body():
    data = _ply([_row(), _row()])
    with pytest.raises(ParseError):
        load_ply(data[:-5])


def test_other_elements_skipped():
    # A face element with fixed-size properties declared before the vertices.
    head = ("ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty double f\n"
            "element vertex 1\n" + "".join(f"property float {p}\n" for p in PLY_PROPERTIES) + "end_header\n")
    body = struct.pack("<d", 3.0) + np.asarray(_row((1, 2, 3)), "<f4").tobytes()
    s = load_ply(head.encode() + body)
    np.testing.assert_array_equal(s.positions[0], [1, 2, 3])


def test_save_sizes():
    empty = save_ply(Scene.empty())
    assert load_ply(empty) == Scene.empty()
    one = save_ply(random_scene(0, n=1))
    assert len(one) - len(empty.replace(b"vertex 0", b"vertex 1")) == 248


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 50))
def test_ply_round_trip(seed, n):
    s = random_scene(seed, n=n)
    data = save_ply(s)
    back = load_ply(data)
    assert back == s
    assert save_ply(back) == data


def test_scene_from_records_round_trip():
    s = random_scene(3, n=5)
    assert Scene.from_records(s.records()) == s
    assert isinstance(s.record(0), SplatRecord)


def test_activate_trivial_values():
    rec = SplatRecord(np.zeros(3), np.zeros(3), np.array([2.0, 0, 0, 0]), 0.0, np.zeros(3), np.zeros(45))
    a = activate(rec)
    np.testing.assert_array_equal(a.scale, [1, 1, 1])
    assert a.opacity == 0.5
    np.testing.assert_array_equal(a.rgb, [0.5, 0.5, 0.5])
    np.testing.assert_allclose(a.rot_unit, [1, 0, 0, 0])
    with pytest.raises(DataError):
        activate(SplatRecord(np.zeros(3), np.zeros(3), np.zeros(4), 0.0, np.zeros(3), np.zeros(45)))


def test_activate_scene_matches_record_activation():
    s = random_scene(11, n=20)
    act = activate_scene(s)
    for i in range(len(s)):
        a = activate(s.record(i))
        np.testing.assert_allclose(act.scales[i], a.scale, rtol=1e-12)
        np.testing.assert_allclose(act.opacity[i], a.opacity, rtol=1e-12)
        np.testing.assert_allclose(act.rgb[i], 0.5 + SH_C0 * s.sh_dc[i].astype(float), rtol=1e-12)
        assert abs(np.linalg.norm(act.rot_unit[i]) - 1) < 1e-6
        assert 0 < act.opacity[i] < 1


def _splat(scale, rot):
    return activate(SplatRecord(np.zeros(3), np.log(np.asarray(scale, float)), np.asarray(rot, float),
                                0.0, np.zeros(3), np.zeros(45)))


def test_principal_direction_examples():
    np.testing.assert_allclose(principal_direction(_splat((3, 1, 1), (1, 0, 0, 0))), [1, 0, 0])
    c = np.cos(np.pi / 4)
    np.testing.assert_allclose(principal_direction(_splat((3, 1, 1), (c, 0, 0, c))), [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(principal_direction(_splat((1, 1, 1), (1, 0, 0, 0))), [1, 0, 0])
    # 180 degrees about z maps x to -x; canonical sign flips it back.
    np.testing.assert_allclose(principal_direction(_splat((3, 1, 1), (0, 0, 0, 1))), [1, 0, 0], atol=1e-12)


def test_principal_directions_match_oracle():
    s = random_scene(5, n=200)
    act = activate_scene(s)
    got = principal_directions(act.scales, act.rot_unit)
    assert np.allclose(np.linalg.norm(got, axis=1), 1, atol=1e-6)
    for i in range(len(s)):
        np.testing.assert_allclose(got[i], principal_direction_oracle(s.log_scales[i], s.rots[i]), atol=1e-9)


def test_subset_stats_examples():
    line = np.zeros((100, 3))
    line[:, 0] = np.arange(100)
    s = Scene(line, np.zeros((100, 3)), np.tile([1, 0, 0, 0], (100, 1)), np.zeros(100),
              np.zeros((100, 3)), np.zeros((100, 45)))
    st_line = subset_stats(s, np.arange(100))
    assert st_line.elongation >= 1e6
    assert st_line.spatial_volume == 0 and np.isfinite(st_line.density)

    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    c = Scene(corners, np.zeros((8, 3)), np.tile([1, 0, 0, 0], (8, 1)), np.zeros(8),
              np.zeros((8, 3)), np.zeros((8, 45)))
    st_c = subset_stats(c, np.arange(8))
    assert st_c.count == 8
    assert st_c.elongation == pytest.approx(1.0)
    assert st_c.spatial_volume == pytest.approx(1.0)
    assert st_c.density == pytest.approx(8.0)


def test_subset_stats_errors():
    s = random_scene(0, n=5)
    with pytest.raises(InputError):
        subset_stats(s, [])
    with pytest.raises(InputError):
        subset_stats(s, [5])


def test_elongation_at_least_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = random_scene(int(rng.integers(1000)), n=30)
        assert subset_stats(s, np.arange(30)).elongation >= 1.0
