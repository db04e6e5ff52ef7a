"""Selects the kernel backend for convolution and pooling.

Two interchangeable implementations exist: compiled numba loops (the default
whenever numba imports) and a pure-numpy path built on im2col plus BLAS
matmul. Force one with RELIEF_BACKEND=numba or RELIEF_BACKEND=numpy. Both
are individually deterministic; they agree to normal floating-point
tolerance but not bitwise, so pick one per experiment.
"""

import os

ENV_VAR = "RELIEF_BACKEND"


def _numba_available() -> bool:
    # numba snapshots its config on first import, so the threading-layer
    # default has to land before that; workqueue sidesteps TBB/OpenMP
    # version probing and is plenty on typical core counts
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def select_backend() -> str:
    choice = os.environ.get(ENV_VAR, "auto").strip().lower() or "auto"
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _numba_available():
            raise ImportError(f"{ENV_VAR}=numba but numba is not importable")
        return "numba"
    return "numba" if _numba_available() else "numpy"
