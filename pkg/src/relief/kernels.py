"""Kernel dispatch: binds the backend chosen at import time.

Import this module (not _kernels_numba / _kernels_numpy) for compute;
``BACKEND`` records which implementation is live.
"""

from . import backend

BACKEND = backend.select_backend()

if BACKEND == "numba":
    from . import _kernels_numba as _impl
else:
    from . import _kernels_numpy as _impl

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward


def set_threads(count: int) -> None:
    """Cap kernel worker threads; no-op on the numpy backend."""
    if count < 1:
        raise ValueError(f"thread count must be >= 1, got {count}")
    if BACKEND == "numba":
        import numba

        numba.set_num_threads(count)
