"""Selects the prototype head kernel at import time.

The compiled extension is preferred; set ``KEAF_BACKEND=python`` to force the
numpy fallback (or ``compiled`` to fail loudly when the extension is absent).
"""
from __future__ import annotations

import os

from . import _head_py

try:
    from . import _head_ext
except ImportError:  # extension not built
    _head_ext = None

KERNELS = {"python": _head_py.head_kernel}
if _head_ext is not None:
    KERNELS["compiled"] = _head_ext.head_kernel


def get_kernel(name: str):
    try:
        return KERNELS[name]
    except KeyError:
        raise ImportError(
            f"head kernel backend {name!r} unavailable (have: {sorted(KERNELS)})"
        ) from None


def _select() -> str:
    requested = os.environ.get("KEAF_BACKEND", "").strip().lower()
    if requested:
        get_kernel(requested)
        return requested
    return "compiled" if "compiled" in KERNELS else "python"


BACKEND = _select()
head_kernel = KERNELS[BACKEND]
