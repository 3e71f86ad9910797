"""Backend selection for the sampling kernels.

The compiled extension is used when it imports; setting ``CORA_PURE_PYTHON=1``
forces the numpy fallback. ``BACKEND`` names the active one.

Kernels
-------
sample_layer(tri, box, coarse, u_tri, u_box)
    Ancestral draw of one layer for a batch of coarse configurations.
ring_ffbs(phi, box, pair, fine, unif)
    Exact posterior draw of coarse configurations given fine ones on the
    periodic chain of blocks; returns ``(coarse, log_evidence)``.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
if not os.environ.get("CORA_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def sample_layer(tri, box, coarse, u_tri, u_box, backend=None):
    impl = _backend(backend)
    return impl.sample_layer(_f64(tri), _f64(box), _i64(coarse), _f64(u_tri), _f64(u_box))


def ring_ffbs(phi, box, pair, fine, unif, backend=None):
    impl = _backend(backend)
    return impl.ring_ffbs(_f64(phi), _f64(box), _f64(pair), _i64(fine), _f64(unif))


def _backend(name):
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
