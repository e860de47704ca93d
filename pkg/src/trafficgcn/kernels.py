"""Kernel backend selection.

The compiled extension is used when importable; set ``TRAFFICGCN_PURE_PYTHON=1``
to force the pure-Python implementations.
"""
import os

from . import _kernels_py

if os.environ.get("TRAFFICGCN_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

shortest_path_tree = _impl.shortest_path_tree
all_or_nothing = _impl.all_or_nothing
line_search = _impl.line_search
brandes = _impl.brandes

__all__ = ["BACKEND", "shortest_path_tree", "all_or_nothing", "line_search", "brandes"]
