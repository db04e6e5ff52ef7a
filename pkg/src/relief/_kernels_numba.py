"""Numba-compiled kernel implementations.

Loop bodies are written so LLVM can vectorize them: the forward and
grad-input kernels stream along rows with no loop-carried dependence and
compile without fastmath, keeping a fixed evaluation order. The weight
gradient is a genuine dot-product reduction, which only vectorizes when
reassociation is allowed, so that one kernel enables fastmath; its
accumulation order is fixed at compile time, so results stay reproducible
run to run. Parallel chunks write disjoint outputs, which keeps every
kernel deterministic regardless of thread count.
"""

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def _conv_fwd(xp, w, b, out):
    n, co, h, wd = out.shape
    ci = xp.shape[1]
    for t in prange(n * co):
        bi = t // co
        o = t % co
        for y in range(h):
            orow = out[bi, o, y]
            for x in range(wd):
                orow[x] = b[o]
            for i in range(ci):
                for dy in range(3):
                    xrow = xp[bi, i, y + dy]
                    for dx in range(3):
                        wv = w[o, i, dy, dx]
                        for x in range(wd):
                            orow[x] += wv * xrow[x + dx]


@njit(parallel=True, cache=True)
def _conv_bwd_input(g, w, gxp):
    n, co, h, wd = g.shape
    ci = gxp.shape[1]
    for t in prange(n * ci):
        bi = t // ci
        i = t % ci
        for o in range(co):
            for y in range(h):
                grow = g[bi, o, y]
                for dy in range(3):
                    xrow = gxp[bi, i, y + dy]
                    for dx in range(3):
                        wv = w[o, i, dy, dx]
                        for x in range(wd):
                            xrow[x + dx] += wv * grow[x]


@njit(parallel=True, cache=True, fastmath=True)
def _conv_bwd_weights(xp, g, gw):
    n, co, h, wd = g.shape
    ci = xp.shape[1]
    for t in prange(co * ci):
        o = t // ci
        i = t % ci
        zero = xp[0, 0, 0, 0] - xp[0, 0, 0, 0]  # accumulator in the array dtype
        for dy in range(3):
            for dx in range(3):
                acc = zero
                for bi in range(n):
                    for y in range(h):
                        xrow = xp[bi, i, y + dy]
                        grow = g[bi, o, y]
                        for x in range(wd):
                            acc += grow[x] * xrow[x + dx]
                gw[o, i, dy, dx] = acc


@njit(parallel=True, cache=True)
def _maxpool_fwd(x, out, arg):
    n, c, ho, wo = out.shape
    for t in prange(n * c):
        bi = t // c
        ch = t % c
        for y in range(ho):
            for xc in range(wo):
                y0 = 2 * y
                x0 = 2 * xc
                best = x[bi, ch, y0, x0]
                bidx = 0
                v = x[bi, ch, y0, x0 + 1]
                if v > best:
                    best = v
                    bidx = 1
                v = x[bi, ch, y0 + 1, x0]
                if v > best:
                    best = v
                    bidx = 2
                v = x[bi, ch, y0 + 1, x0 + 1]
                if v > best:
                    best = v
                    bidx = 3
                out[bi, ch, y, xc] = best
                arg[bi, ch, y, xc] = bidx


@njit(parallel=True, cache=True)
def _maxpool_bwd(g, arg, gx):
    n, c, ho, wo = g.shape
    for t in prange(n * c):
        bi = t // c
        ch = t % c
        for y in range(ho):
            for xc in range(wo):
                k = arg[bi, ch, y, xc]
                gx[bi, ch, 2 * y + k // 2, 2 * xc + k % 2] = g[bi, ch, y, xc]


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    n, ci, h, w = x.shape
    co = weights.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.empty((n, co, h, w), dtype=x.dtype)
    _conv_fwd(xp, weights, bias, out)
    return out


def conv2d_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray):
    n, ci, h, w = x.shape
    co = weights.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    g = np.ascontiguousarray(grad_out)
    gxp = np.zeros((n, ci, h + 2, w + 2), dtype=x.dtype)
    _conv_bwd_input(g, weights, gxp)
    grad_w = np.empty((co, ci, 3, 3), dtype=x.dtype)
    _conv_bwd_weights(xp, g, grad_w)
    grad_b = g.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1]), grad_w, grad_b


def maxpool2_forward(x: np.ndarray):
    n, c, h, w = x.shape
    out = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    arg = np.empty((n, c, h // 2, w // 2), dtype=np.uint8)
    _maxpool_fwd(x, out, arg)
    return out, arg


def maxpool2_backward(grad_out: np.ndarray, arg: np.ndarray) -> np.ndarray:
    n, c, ho, wo = grad_out.shape
    gx = np.zeros((n, c, ho * 2, wo * 2), dtype=grad_out.dtype)
    _maxpool_bwd(np.ascontiguousarray(grad_out), arg, gx)
    return gx
