"""Numba toggle.

Set ``SEMOBS_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. when
debugging or on platforms without a numba wheel.
"""

from __future__ import annotations

import os

_FLAG = "SEMOBS_DISABLE_NUMBA"


def numba_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def decorate(func):
            return func

        return decorate


USE_NUMBA = HAVE_NUMBA and not numba_disabled()
