"""Hot-kernel backend selection.

The compiled extension (_speedups, Cython) is preferred when importable;
otherwise the pure-Python fallback is used. Set PULSELUT_PURE=1 to force
the fallback, e.g. for parity benchmarks.
"""
import os

if os.environ.get("PULSELUT_PURE"):
    from . import _fallback as backend
else:
    try:
        from . import _speedups as backend  # type: ignore[attr-defined]
    except ImportError:
        from . import _fallback as backend

BACKEND_NAME = backend.NAME


def available_backends():
    from . import _fallback

    found = {_fallback.NAME: _fallback}
    try:
        from . import _speedups  # type: ignore[attr-defined]

        found[_speedups.NAME] = _speedups
    except ImportError:
        pass
    return found
