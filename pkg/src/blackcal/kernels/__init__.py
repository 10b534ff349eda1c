"""ORCA descent kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is selected. Set ``BLACKCAL_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

_python = _fallback

try:  # pragma: no cover - depends on the build
    if os.environ.get("BLACKCAL_BACKEND", "").lower() == "python":
        raise ImportError("fallback requested")
    from . import _ckernels as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

BACKENDS = {"python": _python}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled
BACKEND = "compiled" if _compiled is not None else "python"


def get_backend(name: str | None = None):
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}") from None


def pack(terms, comp_ptr, comp_idx, comp_w) -> tuple:
    """Contiguous float64/int64 arrays in kernel argument order."""
    f = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    qw = f(terms.qw)
    qsuf = np.zeros(qw.size + 1)
    if qw.size:
        qsuf[:-1] = np.cumsum(qw[::-1])[::-1]
    return (
        f(terms.H), f(terms.L), f(terms.c0), f(terms.C), f(terms.qlev), qw, qsuf,
        f(terms.gU), f(terms.gV), f(terms.gv0),
        np.ascontiguousarray(comp_ptr, dtype=np.int64),
        np.ascontiguousarray(comp_idx, dtype=np.int64),
        f(comp_w),
    )
