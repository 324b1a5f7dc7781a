"""Kernel selection: compiled ``_core`` when importable, else ``_pure``.

Set ``SWB_PURE=1`` to force the pure-Python kernels.
"""
import os

from . import _pure

if os.environ.get("SWB_PURE", "").strip() not in ("", "0"):
    kernels = _pure
else:
    try:
        from . import _core as kernels
    except ImportError:  # extension not built
        kernels = _pure

NAME = kernels.NAME


def available():
    """All importable kernel modules, compiled first."""
    mods = []
    try:
        from . import _core

        mods.append(_core)
    except ImportError:
        pass
    mods.append(_pure)
    return mods
