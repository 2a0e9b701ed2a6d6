"""JIT dispatch for the numeric hot paths.

Kernels decorated with :func:`maybe_njit` run under numba's nopython JIT by
default.  Setting the environment variable ``GPCBF_DISABLE_NUMBA=1`` (checked
once at import) selects the plain-numpy fallback: the same functions execute
uncompiled.  Both paths produce identical results up to floating-point
rounding; ``benchmarks/bench_accel.py`` compares their throughput.
"""

import os

_flag = os.environ.get("GPCBF_DISABLE_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

if not _disabled:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        numba = None
        _disabled = True

NUMBA_ENABLED = not _disabled


def maybe_njit(func=None, **options):
    """Apply ``numba.njit`` unless the fallback path is selected."""
    options.setdefault("cache", True)

    def wrap(f):
        if NUMBA_ENABLED:
            return numba.njit(**options)(f)
        return f

    if func is not None:
        return wrap(func)
    return wrap
