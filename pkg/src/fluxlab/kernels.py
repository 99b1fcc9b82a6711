"""Kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the numpy
fallback is used. Set ``FLUXLAB_KERNELS=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("FLUXLAB_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

rank_configs = _impl.rank_configs
filter_weight_matrix = _impl.filter_weight_matrix
assemble_dense = _impl.assemble_dense
reduced_density = _impl.reduced_density

SERIES_SWITCH = _kernels_py.SERIES_SWITCH


def backend_module(name: str):
    """Return the kernel module for ``name`` in {"python", "cython"}."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels as compiled  # type: ignore[attr-defined]

        return compiled
    raise ValueError(f"unknown kernel backend {name!r}")
