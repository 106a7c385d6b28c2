"""Backend selection for the hot kernels.

The sequential tracker recursions prefer the compiled extension and fall
back to the NumPy implementation when the extension is absent or
STBEM_PURE_PYTHON is set to a non-empty value other than "0"; ``BACKEND``
names the active implementation. Ray synthesis always uses the NumPy
path, where it reduces to a BLAS matrix product that benchmarks faster
than the compiled triple loop (see benchmarks/bench_kernels.py).
"""

from __future__ import annotations

import os

from . import _kernels_py

_force_py = os.environ.get("STBEM_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels_cy as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

ukf_forward = _impl.ukf_forward
urtss_backward = _impl.urtss_backward
synth_rays = _kernels_py.synth_rays
