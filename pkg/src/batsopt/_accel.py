"""Backend selection for the numeric kernels.

Hot loops (the simplex pivot loop, GF(256) linear algebra, constraint-matrix
assembly) are written once and compiled with numba when available.  Setting
the environment variable ``BATSOPT_NUMBA=0`` before import forces the pure
numpy path; the same source runs uncompiled.  ``benchmarks/bench_kernels.py``
compares the two.
"""

from __future__ import annotations

import os

ENV_FLAG = "BATSOPT_NUMBA"


def _detect() -> bool:
    flag = os.environ.get(ENV_FLAG, "1").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USING_NUMBA = _detect()

if USING_NUMBA:
    from numba import njit
else:

    def njit(*args, **kwargs):
        """No-op decorator standing in for numba.njit."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


def backend_name() -> str:
    return "numba" if USING_NUMBA else "numpy"
