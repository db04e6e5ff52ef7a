"""Numeric building blocks for the network: convolution, pooling,
upsampling, activation, dropout, He initialization, Adam, loss.

Tensors are plain numpy arrays in (batch, channel, height, width) layout.
Everything is float32 in normal use; gradient-check code passes float64
arrays and gets float64 throughout. All operations are deterministic given
their inputs and the supplied numpy Generator.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericError


@dataclass
class ConvParams:
    """Weights (out_ch, in_ch, 3, 3) and bias (out_ch,) of one convolution."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2:] != (3, 3):
            raise ValueError(f"weights must have shape (co, ci, 3, 3), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} output channels")

    @classmethod
    def initialized(cls, out_ch: int, in_ch: int, rng, dtype=np.float32) -> "ConvParams":
        w = he_init((out_ch, in_ch, 3, 3), rng).astype(dtype)
        return cls(w, np.zeros(out_ch, dtype=dtype))


def he_init(shape, rng) -> np.ndarray:
    """Draw weights from Normal(0, 2/fan_in), fan_in = product of input dims."""
    if len(shape) < 2:
        raise ValueError(f"he_init needs a weight shape of rank >= 2, got {shape}")
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)


def _check_input(x: np.ndarray, channels: int | None = None) -> np.ndarray:
    if x.ndim != 4:
        raise ValueError(f"expected a (n, c, h, w) tensor, got shape {x.shape}")
    if channels is not None and x.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got {x.shape[1]} (shape {x.shape})")
    return np.ascontiguousarray(x)


def conv2d_forward(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """Same-padded 3x3 convolution plus bias; spatial shape preserved."""
    x = _check_input(x, params.weights.shape[1])
    return kernels.conv2d_forward(x, params.weights, params.bias)


def conv2d_backward(x: np.ndarray, params: ConvParams, grad_out: np.ndarray):
    """Adjoint of conv2d_forward: (grad_input, grad_weights, grad_bias)."""
    x = _check_input(x, params.weights.shape[1])
    if grad_out.shape != (x.shape[0], params.weights.shape[0], x.shape[2], x.shape[3]):
        raise ValueError(f"grad_out shape {grad_out.shape} inconsistent with input {x.shape}")
    return kernels.conv2d_backward(x, params.weights, grad_out)


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling; returns (pooled, argmax) with ties going to the
    first cell in row-major scan order."""
    x = _check_input(x)
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"pooling needs even spatial dimensions, got {x.shape[2]}x{x.shape[3]}")
    return kernels.maxpool2_forward(x)


def maxpool2_backward(grad_out: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    """Route each gradient to its recorded argmax cell; other cells zero."""
    grad_out = _check_input(grad_out)
    if argmax.shape != grad_out.shape:
        raise ValueError(f"argmax shape {argmax.shape} does not match grads {grad_out.shape}")
    if argmax.size and int(argmax.max()) > 3:
        raise ValueError(f"argmax index out of range: {int(argmax.max())} > 3")
    return kernels.maxpool2_backward(grad_out, argmax)


def upsample2_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x upsampling: each cell fills its 2x2 block."""
    x = _check_input(x)
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_backward(grad_out: np.ndarray) -> np.ndarray:
    """Adjoint of replication: sum each 2x2 block."""
    grad_out = _check_input(grad_out)
    n, c, h, w = grad_out.shape
    if h % 2 or w % 2:
        raise ValueError(f"upsampled gradient must have even dimensions, got {h}x{w}")
    return grad_out.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def dropout(x: np.ndarray, rate: float, rng, mode: str):
    """Inverted dropout. Returns (output, mask); mask is None when the call
    is an identity (eval mode or rate 0) and otherwise holds the per-unit
    scale to reuse in the backward pass.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * (x.dtype.type(1.0) / x.dtype.type(1.0 - rate))
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concatenate shapes {a.shape} and {b.shape}")
    return np.concatenate((a, b), axis=1)


def split_channels(x: np.ndarray, first: int):
    """Inverse of concat_channels: split after the first ``first`` channels."""
    if not 0 <= first <= x.shape[1]:
        raise ValueError(f"split point {first} outside 0..{x.shape[1]}")
    return np.ascontiguousarray(x[:, :first]), np.ascontiguousarray(x[:, first:])


@dataclass
class AdamState:
    """First/second moment accumulators and step counter, one pair per
    parameter array, in parameter order."""

    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, alpha: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              names=None) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError(f"got {len(params)} params, {len(grads)} grads, "
                         f"{len(state.m)}/{len(state.v)} moment arrays")
    for k, g in enumerate(grads):
        if not np.isfinite(g).all():
            label = names[k] if names is not None else f"parameter group {k}"
            raise NumericError(f"non-finite gradient in {label}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= alpha * (m / bc1) / (np.sqrt(v / bc2) + eps)


def mse_loss(pred: np.ndarray, target: np.ndarray, region=None):
    """Mean squared error over a central window, with its gradient.

    ``region`` is (y0, x0, height, width) on the spatial axes, applied to
    every batch element and channel; None means the full extent. Returns
    (scalar loss, gradient w.r.t. pred); the gradient is zero outside the
    region. The loss is accumulated in float64 regardless of input dtype.
    """
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} does not match target {target.shape}")
    if pred.ndim != 4:
        raise ValueError(f"expected (n, c, h, w) tensors, got shape {pred.shape}")
    n, c, h, w = pred.shape
    if region is None:
        region = (0, 0, h, w)
    y0, x0, rh, rw = region
    if rh < 1 or rw < 1 or y0 < 0 or x0 < 0 or y0 + rh > h or x0 + rw > w:
        raise ValueError(f"region {region} outside {h}x{w} extent")
    dp = pred[:, :, y0 : y0 + rh, x0 : x0 + rw] - target[:, :, y0 : y0 + rh, x0 : x0 + rw]
    count = dp.size
    loss = float(np.sum(np.square(dp, dtype=np.float64)) / count)
    grad = np.zeros_like(pred)
    grad[:, :, y0 : y0 + rh, x0 : x0 + rw] = dp * (2.0 / count)
    return loss, grad


def clip01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)
