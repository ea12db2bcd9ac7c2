"""Backend selection for the pairwise scoring kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``DPGAUSS_KERNELS=python`` to force the fallback.
"""

import os
from contextlib import contextmanager

from dpgauss import _pykernels

try:
    from dpgauss import _kernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"python": _pykernels}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active_name = "compiled" if _compiled is not None else "python"
if os.environ.get("DPGAUSS_KERNELS") == "python":
    _active_name = "python"
_active = _BACKENDS[_active_name]


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return _active_name


@contextmanager
def use_backend(name):
    """Temporarily switch the active backend (``"compiled"`` or ``"python"``)."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    previous = _active_name
    _active, _active_name = _BACKENDS[name], name
    try:
        yield
    finally:
        _active, _active_name = _BACKENDS[previous], previous


def spectral_dist_matrix(mats, linv):
    return _active.spectral_dist_matrix(mats, linv)


def spectral_within_counts(mats, linv, radius):
    return _active.spectral_within_counts(mats, linv, float(radius))


def euclid_within_counts(points, radius):
    return _active.euclid_within_counts(points, float(radius))
