"""Kernel selection.

The compiled step loop is used when its extension imported; otherwise, or
when ``SNAILS_PURE_PYTHON=1`` is set, the pure-Python reference loop runs.
Both give identical results for the same stream.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

from . import model

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

python = SimpleNamespace(name="python", run_steps=model.run_steps_python)
compiled = None if _ckernel is None else SimpleNamespace(name="compiled", run_steps=_ckernel.run_steps)

if compiled is not None and os.environ.get("SNAILS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    default = compiled
else:
    default = python


def get(name=None):
    if name is None:
        return default
    if hasattr(name, "run_steps"):
        return name
    if name == "python":
        return python
    if name == "compiled":
        if compiled is None:
            raise RuntimeError("compiled kernel is not available; build the extension first")
        return compiled
    raise ValueError(f"unknown backend {name!r}")


def available():
    return ["python"] + ([] if compiled is None else ["compiled"])
