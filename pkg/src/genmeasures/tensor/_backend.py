"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy kernels.
Set ``GENMEASURES_BACKEND=python`` to force the fallback (``cython`` to require
the extension).
"""
from __future__ import annotations

import contextlib
import os
from types import ModuleType

from . import _kernels_py


def _load_compiled() -> ModuleType | None:
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
_requested = os.environ.get("GENMEASURES_BACKEND", "").strip().lower()
if _requested == "cython" and _compiled is None:
    raise ImportError("GENMEASURES_BACKEND=cython but genmeasures.tensor._ckernels is not built")

kernels: ModuleType = _kernels_py if (_requested == "python" or _compiled is None) else _compiled


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _compiled is not None else [])


def backend_name() -> str:
    return "cython" if kernels is _compiled and _compiled is not None else "python"


def set_backend(name: str) -> None:
    global kernels
    if name == "python":
        kernels = _kernels_py
    elif name == "cython":
        if _compiled is None:
            raise ValueError("compiled kernels are not available")
        kernels = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")


@contextlib.contextmanager
def use_backend(name: str):
    previous = backend_name()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)
