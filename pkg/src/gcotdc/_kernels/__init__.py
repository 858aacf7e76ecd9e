"""Hot-loop kernels with backend selection at import time.

The compiled Cython core is preferred; the pure-numpy implementation in
_ref is the drop-in fallback. Both produce bit-identical outputs.
"""
from . import _ref

try:
    from . import _core as _impl

    BACKEND = "cython"
except ImportError:  # extension not built on this interpreter
    _impl = _ref
    BACKEND = "numpy"

fine_bins_from_times = _impl.fine_bins_from_times
count_codes = _impl.count_codes
occurrences_from_codes = _impl.occurrences_from_codes
measure_from_codes = _impl.measure_from_codes


def available_backends():
    """Name -> module for every importable backend (equivalence tests, benchmarks)."""
    backends = {"numpy": _ref}
    if _impl is not _ref:
        backends[BACKEND] = _impl
    return backends
