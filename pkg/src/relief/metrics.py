"""Image comparison metrics: mean squared error and uniform-window SSIM."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"metrics expect 2-D images, got shapes {a.shape} and {b.shape}")
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    """Mean of squared per-pixel differences."""
    a, b = _pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def ssim(a, b, window: int = 8, c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> float:
    """Structural similarity with uniform (unweighted) windows, stride 1.

    Stabilizers default to (0.01)^2 and (0.03)^2 for the [0, 1] dynamic
    range. Both inputs go through the same moment computations, which makes
    ssim(x, x) exactly 1.0.
    """
    a, b = _pair(a, b)
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape} smaller than {window}x{window} window")
    if not (c1 > 0 and c2 > 0):
        raise ValueError(f"stabilizers must be positive, got c1={c1}, c2={c2}")
    ho = a.shape[0] - window + 1
    smap = np.empty((ho, a.shape[1] - window + 1))
    # row-chunked so the window views never materialize huge intermediates
    chunk = max(1, 2 ** 22 // (a.shape[1] * window * window))
    for r0 in range(0, ho, chunk):
        r1 = min(r0 + chunk, ho)
        wa = sliding_window_view(a[r0 : r1 + window - 1], (window, window))
        wb = sliding_window_view(b[r0 : r1 + window - 1], (window, window))
        ea = wa.mean(axis=(2, 3))
        eb = wb.mean(axis=(2, 3))
        va = (wa * wa).mean(axis=(2, 3)) - ea * ea
        vb = (wb * wb).mean(axis=(2, 3)) - eb * eb
        cov = (wa * wb).mean(axis=(2, 3)) - ea * eb
        num = (2.0 * ea * eb + c1) * (2.0 * cov + c2)
        den = (ea * ea + eb * eb + c1) * (va + vb + c2)
        smap[r0:r1] = num / den
    return float(np.mean(smap))
