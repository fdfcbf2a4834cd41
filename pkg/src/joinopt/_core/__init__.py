"""Enumeration kernels: compiled when available, pure Python otherwise.

The compiled backend (Cython) and the pure-Python backend implement the
same subset dynamic program with identical arithmetic and tie-breaking;
equivalence tests hold them to bitwise-equal outputs. Set JOINOPT_PURE=1
to force the Python backend.
"""

from __future__ import annotations

import os

from . import _kernels_py
from .problem import (
    MAX_RELATIONS,
    OP_HASH,
    OP_INDEX,
    SHAPE_EX,
    SHAPE_LD,
    SHAPE_RD,
    SHAPE_ZZ,
    KernelResult,
    Problem,
    build_problem,
    connectivity,
    cross_selectivity,
    inc_cost,
    left_key_less,
    reuse_possible,
    subset_rows,
)

if os.environ.get("JOINOPT_PURE") == "1":
    _impl = _kernels_py
    KERNEL_BACKEND = "python"
else:
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]

        _impl = _compiled
        KERNEL_BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        KERNEL_BACKEND = "python"

solve = _impl.solve
solve_python = _kernels_py.solve

__all__ = [
    "KERNEL_BACKEND",
    "KernelResult",
    "MAX_RELATIONS",
    "OP_HASH",
    "OP_INDEX",
    "Problem",
    "SHAPE_EX",
    "SHAPE_LD",
    "SHAPE_RD",
    "SHAPE_ZZ",
    "build_problem",
    "connectivity",
    "cross_selectivity",
    "inc_cost",
    "left_key_less",
    "reuse_possible",
    "solve",
    "solve_python",
    "subset_rows",
]
