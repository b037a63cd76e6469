"""Decode-time hot kernels with a compiled core and a numpy fallback.

The C extension (built from _speedups.pyx) is preferred when importable;
otherwise the numpy reference in _ref is used. STREAMATTN_KERNEL=py or =c
forces a backend at import time (=c raises if the extension is missing),
and set_backend() switches at runtime so benchmarks can compare both.
"""

import os

from . import _ref

try:
    from . import _speedups
except ImportError:
    _speedups = None

_BACKENDS = {"py": _ref}
if _speedups is not None:
    _BACKENDS["c"] = _speedups

_active_name = "c" if _speedups is not None else "py"
_forced = os.environ.get("STREAMATTN_KERNEL", "").strip().lower()
if _forced:
    if _forced not in ("c", "py"):
        raise ValueError(f"STREAMATTN_KERNEL must be 'c' or 'py', got {_forced!r}")
    if _forced not in _BACKENDS:
        raise ImportError("STREAMATTN_KERNEL=c but the compiled kernels are not built")
    _active_name = _forced

_active = _BACKENDS[_active_name]


def available_backends() -> tuple:
    return tuple(sorted(_BACKENDS))


def get_backend() -> str:
    return _active_name


def get_backend_module(name: str):
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    return _BACKENDS[name]


def set_backend(name: str):
    """Switch the active kernel backend ('c' or 'py') for this process."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    _active_name = name
    _active = _BACKENDS[name]


def rotate(x, positions, thetas):
    return _active.rotate(x, positions, thetas)


def attend(q, keys, values, scale):
    return _active.attend(q, keys, values, scale)
