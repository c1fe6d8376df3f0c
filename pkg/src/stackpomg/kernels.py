"""Backend selection for the inner loops.

The compiled extension is used when it was built; set
``STACKPOMG_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("STACKPOMG_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

dominance_keep_mask = _impl.dominance_keep_mask
nondominated_ranks = _impl.nondominated_ranks
pair_transitions = _impl.pair_transitions


def available_backends():
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
