import numpy as np
import pytest

from gssp.errors import DataError
from gssp.halffloat import HALF_MAX, HALF_REL_ERROR, from_half, round_half, to_half
from oracles import half_round_oracle


def test_trivial_values():
    assert from_half(to_half(1.0)) == 1.0
    assert from_half(to_half(70000.0)) == 65504.0
    assert from_half(to_half(-1e9)) == -65504.0
    assert from_half(to_half(np.inf)) == HALF_MAX
    assert to_half(0.0).dtype == np.uint16


def test_nan_rejected():
    with pytest.raises(DataError):
        to_half([1.0, np.nan])


def test_matches_struct_oracle(rng):
    vals = np.concatenate([
        rng.normal(scale=1e-3, size=500), rng.normal(scale=100, size=500),
        rng.uniform(-7e4, 7e4, 200), [65519.0, 65520.0, 1e-8, -6.1e-5, 2.0 ** -24, 2.0 ** -25],
    ])
    got = round_half(vals)
    want = np.array([half_round_oracle(v) for v in vals])
    np.testing.assert_array_equal(got, want)


def test_relative_bound_on_normal_range(rng):
    exps = rng.uniform(-14, 15.99, 100_000)
    v = rng.choice([-1, 1], 100_000) * 2.0 ** exps
    v = v[np.abs(v) <= HALF_MAX]
    rel = np.abs(round_half(v) - v) / np.abs(v)
    assert rel.max() <= HALF_REL_ERROR


def test_round_trip_of_bits_is_identity():
    bits = np.arange(1 << 16, dtype=np.uint16)
    vals = from_half(bits)
    finite = np.isfinite(vals)
    back = to_half(vals[finite])
    # -0 and +0 keep their own bit patterns.
    np.testing.assert_array_equal(back, bits[finite])
