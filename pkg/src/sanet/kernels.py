"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``SANET_BACKEND=python`` forces the fallback. Both backends
return bit-identical results, so switching never changes training
trajectories.
"""
import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = ("im2col", "col2im", "maxpool2_forward", "maxpool2_backward", "label8")


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def get_backend(name: str) -> ModuleType:
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def use_backend(name: str) -> None:
    """Rebind the module-level kernel functions to the named backend."""
    global BACKEND
    mod = get_backend(name)
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(mod, fn)
    BACKEND = name


BACKEND = ""
_requested = os.environ.get("SANET_BACKEND", "").lower()
if _requested:
    use_backend(_requested)
else:
    use_backend("cython" if _ckernels is not None else "python")
