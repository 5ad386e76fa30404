"""Event-loop backend selection.

The compiled kernel is used when it imports; ``MSLFV_PURE=1`` forces the
pure-Python loop. Both consume the random stream identically.
"""
import os

from . import _pykernel

try:
    from . import _kernel
except ImportError:  # extension not built
    _kernel = None

BACKENDS = {"python": _pykernel}
if _kernel is not None:
    BACKENDS["cython"] = _kernel

if os.environ.get("MSLFV_PURE") or _kernel is None:
    DEFAULT = "python"
else:
    DEFAULT = "cython"


def get(name=None):
    name = name or DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
