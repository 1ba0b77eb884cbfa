import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gssp import _pykernels, kernels
from oracles import morton_oracle, nearest_oracle, varint_oracle

BACKENDS = sorted(kernels.backends().items())
IDS = [name for name, _ in BACKENDS]


def test_backend_selected():
    assert kernels.BACKEND in kernels.backends()


@pytest.mark.parametrize("name,mod", BACKENDS, ids=IDS)
def test_morton_against_oracle(name, mod, rng):
    q = rng.integers(0, 1 << 16, size=(200, 3))
    got = mod.morton_codes(q)
    assert [int(c) for c in got] == [morton_oracle(*map(int, r)) for r in q]
    assert int(mod.morton_codes(np.array([[65535, 65535, 65535]]))[0]) == (1 << 48) - 1


@pytest.mark.parametrize("name,mod", BACKENDS, ids=IDS)
@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-(1 << 63), (1 << 63) - 1), max_size=60))
def test_varint_round_trip(name, mod, values):
    v = np.array(values, dtype=np.int64)
    blob = mod.encode_varints(v)
    assert blob == varint_oracle(values)
    back, end = mod.decode_varints(b"xx" + blob, 2, len(values))
    assert end == 2 + len(blob)
    assert back.tolist() == values


@pytest.mark.parametrize("name,mod", BACKENDS, ids=IDS)
def test_varint_errors(name, mod):
    with pytest.raises(ValueError):
        mod.decode_varints(b"\x80\x80", 0, 1)
    with pytest.raises(ValueError):
        mod.decode_varints(b"\x01", 0, 2)
    with pytest.raises(ValueError):
        mod.decode_varints(b"\xff" * 11 + b"\x01", 0, 1)


@pytest.mark.parametrize("name,mod", BACKENDS, ids=IDS)
def test_nearest_sorted(name, mod, rng):
    cb = np.unique(rng.normal(size=30))
    vals = np.concatenate([rng.normal(scale=2, size=300), cb, (cb[:-1] + cb[1:]) / 2])
    got = mod.nearest_sorted(vals, cb)
    for v, g in zip(vals, got):
        assert g == nearest_oracle(v, cb)
    assert mod.nearest_sorted(np.array([0.5]), np.array([0.0, 1.0]))[0] == 0  # tie goes low
    assert mod.nearest_sorted(np.array([3.0]), np.array([1.0]))[0] == 0


@pytest.mark.parametrize("name,mod", BACKENDS, ids=IDS)
def test_expand_clusters_matches_reference(name, mod, rng):
    for _ in range(20):
        n = int(rng.integers(1, 80))
        A = rng.random((n, n)) < 0.08
        A = A | A.T
        np.fill_diagonal(A, False)
        indptr = np.concatenate([[0], np.cumsum(A.sum(axis=1))]).astype(np.int64)
        indices = np.concatenate([np.flatnonzero(r) for r in A] + [np.zeros(0, int)]).astype(np.int64)
        core = (A.sum(axis=1) >= 2).astype(np.uint8)
        ref = _pykernels.expand_clusters(indptr, indices, core)
        np.testing.assert_array_equal(mod.expand_clusters(indptr, indices, core), ref)


def test_backends_agree_on_random_streams(rng):
    mods = [m for _, m in BACKENDS]
    v = rng.integers(-(1 << 40), 1 << 40, size=5000)
    blobs = {m.encode_varints(v) for m in mods}
    assert len(blobs) == 1
    q = rng.integers(0, 1 << 16, size=(5000, 3))
    codes = [m.morton_codes(q) for m in mods]
    for c in codes[1:]:
        np.testing.assert_array_equal(c, codes[0])
