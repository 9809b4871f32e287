"""Backend selection for the planner's successor generator.

The compiled extension is used when it was built; set ``RELSYM_PURE_PYTHON=1``
to force the fallback (both produce identical search results).
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernel_py

try:
    from . import _bitset
except ImportError:  # extension not built
    _bitset = None

BACKENDS = {"python": _kernel_py.BitsetKernel}
if _bitset is not None:
    BACKENDS["cython"] = _bitset.BitsetKernel

DEFAULT_BACKEND = ("cython" if "cython" in BACKENDS and not os.environ.get("RELSYM_PURE_PYTHON")
                   else "python")


def pack(rows: list[list[int]], n_atoms: int) -> np.ndarray:
    """Bitset matrix (len(rows), words) of uint64 from lists of set bit indices."""
    words = max(1, (n_atoms + 63) // 64)
    out = np.zeros((len(rows), words), dtype=np.uint64)
    for r, idx in enumerate(rows):
        for i in idx:
            out[r, i >> 6] |= np.uint64(1) << np.uint64(i & 63)
    return out


def make_kernel(pre_rows, add_rows, del_rows, goal_idx, n_atoms: int, backend: str | None = None):
    backend = backend or DEFAULT_BACKEND
    if backend not in BACKENDS:
        raise ValueError(f"backend {backend!r} unavailable (have {sorted(BACKENDS)})")
    pre = pack(pre_rows, n_atoms)
    add = pack(add_rows, n_atoms)
    dele = pack(del_rows, n_atoms)
    goal = pack([goal_idx], n_atoms)[0]
    return BACKENDS[backend](pre, add, dele, goal, n_atoms)
