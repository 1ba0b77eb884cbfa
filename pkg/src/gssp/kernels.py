"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported. Set ``GSSP_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("GSSP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

expand_clusters = _impl.expand_clusters
morton_codes = _impl.morton_codes
encode_varints = _impl.encode_varints
decode_varints = _impl.decode_varints
nearest_sorted = _impl.nearest_sorted


def backends():
    """Mapping of available backend name to module."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
