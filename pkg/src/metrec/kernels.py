"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy versions
in :mod:`metrec._pure` are used. Set ``METREC_PURE=1`` to force the fallback.
"""
from __future__ import annotations

import logging
import os

from . import _pure

_log = logging.getLogger(__name__)

_NAMES = ("row_distances", "topk_indices", "hinge_triplets", "scatter_add_columns", "adam_update")


def _load():
    if os.environ.get("METREC_PURE", "") not in ("", "0"):
        return _pure, "python"
    try:
        from . import _ckernels
    except ImportError as exc:  # pragma: no cover - depends on build
        _log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
        return _pure, "python"
    return _ckernels, "cython"


_impl, BACKEND = _load()

row_distances = _impl.row_distances
topk_indices = _impl.topk_indices
hinge_triplets = _impl.hinge_triplets
scatter_add_columns = _impl.scatter_add_columns
adam_update = _impl.adam_update


def backends() -> dict:
    """All importable backends keyed by name (for tests and benchmarks)."""
    out = {"python": _pure}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:  # pragma: no cover
        pass
    return out


__all__ = ["BACKEND", "backends", *_NAMES]
