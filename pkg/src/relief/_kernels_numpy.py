"""Pure-numpy kernel implementations: im2col + BLAS matmul convolutions.

Same call signatures as the numba versions; see kernels.py for dispatch.
All convolutions are 3x3, stride 1, zero-padded to preserve shape.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x: np.ndarray) -> np.ndarray:
    """(n,ci,h,w) -> (ci*9, n*h*w) patch matrix of the zero-padded input."""
    n, ci, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n,ci,h,w,3,3)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(ci * 9, n * h * w)


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    n, ci, h, w = x.shape
    co = weights.shape[0]
    cols = _im2col(x)
    out = (weights.reshape(co, ci * 9) @ cols).reshape(co, n, h, w)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    out += bias[None, :, None, None]
    return out


def conv2d_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray):
    n, ci, h, w = x.shape
    co = weights.shape[0]
    gmat = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(co, n * h * w)
    grad_w = (gmat @ _im2col(x).T).reshape(co, ci, 3, 3)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    gcols = (weights.reshape(co, ci * 9).T @ gmat).reshape(ci, 3, 3, n, h, w)
    gxp = np.zeros((n, ci, h + 2, w + 2), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            gxp[:, :, dy : dy + h, dx : dx + w] += gcols[:, dy, dx].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1]), grad_w, grad_b


def maxpool2_forward(x: np.ndarray):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = np.ascontiguousarray(blocks).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1).astype(np.uint8)  # argmax takes the first of ties
    out = np.take_along_axis(blocks, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


def maxpool2_backward(grad_out: np.ndarray, arg: np.ndarray) -> np.ndarray:
    n, c, ho, wo = grad_out.shape
    g4 = np.zeros((n, c, ho, wo, 4), dtype=grad_out.dtype)
    np.put_along_axis(g4, arg[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    g4 = g4.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(g4).reshape(n, c, ho * 2, wo * 2)
