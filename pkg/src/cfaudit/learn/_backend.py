"""Selects the tree kernels: compiled extension if importable, numpy otherwise.

Set ``CFAUDIT_PURE_PYTHON=1`` to force the numpy kernels.
"""

import os

from . import _gbt_py

try:
    from . import _gbt_core
except ImportError:  # extension not built
    _gbt_core = None

_BACKENDS = {"python": _gbt_py}
if _gbt_core is not None:
    _BACKENDS["cython"] = _gbt_core

if os.environ.get("CFAUDIT_PURE_PYTHON", "") not in ("", "0") or _gbt_core is None:
    kernels = _gbt_py
else:
    kernels = _gbt_core

BACKEND = kernels.NAME


def available() -> tuple:
    return tuple(_BACKENDS)


def get(name=None):
    if name is None:
        return kernels
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"tree backend {name!r} unavailable; have {available()}") from None
