"""Training-kernel backends and the import-time selection between them.

The compiled Cython kernel is preferred when its extension module built;
otherwise the numpy fallback is used. `UAVFL_BACKEND=numpy|cython` forces
the choice (forcing `cython` raises if the extension is unavailable).
"""

from __future__ import annotations

import os

from uavfl.kernels import backend_numpy

try:
    from uavfl.kernels import _sgd_cy
except ImportError:
    _sgd_cy = None

_BACKENDS = {"numpy": backend_numpy}
if _sgd_cy is not None:
    _BACKENDS["cython"] = _sgd_cy


def get_backend(name: str):
    """Look up a backend module by name."""
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ImportError(
            f"backend {name!r} is not available (have: {sorted(_BACKENDS)})"
        ) from None


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


_forced = os.environ.get("UAVFL_BACKEND")
if _forced:
    active = get_backend(_forced)
else:
    active = _sgd_cy if _sgd_cy is not None else backend_numpy

ACTIVE_NAME = "cython" if active is _sgd_cy else "numpy"
