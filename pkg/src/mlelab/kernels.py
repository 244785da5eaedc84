"""Backend selection for the numerical kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Setting ``MLELAB_PURE_PYTHON=1`` forces the numpy
backend. Both expose the same functions; results agree to rounding but
are not promised to be bit-identical across backends.
"""
import os

from mlelab import _pykernels

python = _pykernels
compiled = None
try:
    from mlelab import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and not os.environ.get("MLELAB_PURE_PYTHON"):
    active = compiled
    BACKEND = "compiled"
else:
    active = _pykernels
    BACKEND = "python"


def available():
    """Names of the backends importable in this environment."""
    return ["python"] + (["compiled"] if compiled is not None else [])


def get(name=None):
    """Return a backend module by name (default: the active one)."""
    if name is None:
        return active
    if name == "python":
        return _pykernels
    if name == "compiled":
        if compiled is None:
            raise ImportError("compiled kernels are not built")
        return compiled
    raise ValueError(f"unknown backend {name!r}")
