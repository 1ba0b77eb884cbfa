"""IEEE-754 binary16 conversion with saturation instead of infinities."""
import numpy as np

from .errors import DataError

HALF_MAX = 65504.0
#: Relative round-trip bound for normal-range values (half a unit in the last place).
HALF_REL_ERROR = 2.0 ** -11


def to_half(values):
    """Round to binary16 (nearest-even from binary32) and return raw uint16 bits.

    Magnitudes above 65504 saturate. NaN raises :class:`DataError`.
    """
    v = np.asarray(values, dtype=np.float64)
    if np.isnan(v).any():
        raise DataError("NaN cannot be converted to half precision")
    f32 = np.clip(v.astype(np.float32), -HALF_MAX, HALF_MAX)
    return f32.astype(np.float16).view(np.uint16)


def from_half(bits):
    """Expand uint16 binary16 bit patterns to float64."""
    return np.asarray(bits, dtype=np.uint16).view(np.float16).astype(np.float64)


def round_half(values):
    """Values after a to_half/from_half round trip."""
    return from_half(to_half(values))
