"""Iteration engines.

The compiled engine (``_engine``, built from Cython against SciPy's BLAS)
is used when it imports; otherwise the numpy engine in ``_reference``.
Set ``LOWRANK_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _reference
from ._reference import CONTINUE, CONVERGED, DIVERGED

ReferenceEngine = _reference.Engine

try:
    if os.environ.get("LOWRANK_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from ._engine import Engine as CompiledEngine
except ImportError:
    CompiledEngine = None

BACKEND = "cython" if CompiledEngine is not None else "python"
Engine = CompiledEngine or ReferenceEngine


def engine_class(backend: str | None = None):
    if backend in (None, "auto"):
        return Engine
    if backend == "python":
        return ReferenceEngine
    if backend == "cython":
        if CompiledEngine is None:
            raise ImportError("compiled engine not built; run `pip install -e . --no-build-isolation`")
        return CompiledEngine
    raise ValueError(f"unknown backend {backend!r}")


__all__ = ["BACKEND", "CONTINUE", "CONVERGED", "DIVERGED", "Engine", "engine_class"]
