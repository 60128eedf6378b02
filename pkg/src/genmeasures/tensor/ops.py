"""Layer primitives on NHWC tensors.

Every op accepts either a single image ``(H, W, C)`` or a batch ``(N, H, W, C)``.
Arithmetic is carried out in float64; results are returned in float32 unless
one of the inputs was already float64, in which case float64 is kept (this is
what lets gradient checks run end to end in double precision).
"""
from __future__ import annotations

import numpy as np

from . import _backend
from .errors import ShapeError
from .rng import SeededRng

STORAGE = np.float32


def _out_dtype(*arrays: np.ndarray) -> type:
    return np.float64 if any(a.dtype == np.float64 for a in arrays) else STORAGE


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _batched(x: np.ndarray, name: str = "input") -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{name}.rank", "3 (H,W,C) or 4 (N,H,W,C)", x.ndim)


def _check_conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> None:
    if kernel.ndim != 4:
        raise ShapeError("kernel.rank", 4, kernel.ndim)
    k = kernel.shape[0]
    if kernel.shape[1] != k:
        raise ShapeError("kernel.width", k, kernel.shape[1])
    if k % 2 == 0:
        raise ShapeError("kernel.size", "odd", k)
    if kernel.shape[2] != x.shape[-1]:
        raise ShapeError("kernel.in_channels", x.shape[-1], kernel.shape[2])
    if bias.shape != (kernel.shape[3],):
        raise ShapeError("bias.length", (kernel.shape[3],), bias.shape)


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 convolution with zero "same" padding (odd square kernels)."""
    xb, single = _batched(np.asarray(x))
    kernel, bias = np.asarray(kernel), np.asarray(bias)
    _check_conv(xb, kernel, bias)
    out = _backend.kernels.conv2d_same(_f64(xb), _f64(kernel), _f64(bias))
    out = out.astype(_out_dtype(xb, kernel, bias), copy=False)
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray):
    """Gradients of ``conv2d`` w.r.t. (input, kernel, bias), all float64."""
    xb, single = _batched(np.asarray(x))
    gb, _ = _batched(np.asarray(grad_out), "grad_out")
    k = kernel.shape[0]
    # input gradient is a same-conv of grad_out with the spatially flipped,
    # channel-transposed kernel
    flipped = _f64(np.asarray(kernel)[::-1, ::-1].transpose(0, 1, 3, 2))
    zero = np.zeros(kernel.shape[2], dtype=np.float64)
    gb = _f64(gb)
    dx = _backend.kernels.conv2d_same(gb, flipped, zero)
    dk = _backend.kernels.conv2d_kernel_grad(_f64(xb), gb, k)
    db = gb.sum(axis=(0, 1, 2))
    return (dx[0] if single else dx), dk, db


def maxpool2(x: np.ndarray) -> np.ndarray:
    """2x2 max pooling, stride 2; odd extents use ceil division (edge windows shrink)."""
    out, _ = maxpool2_with_argmax(x)
    return out


def maxpool2_with_argmax(x: np.ndarray):
    xb, single = _batched(np.asarray(x))
    if xb.shape[1] < 1 or xb.shape[2] < 1:
        raise ShapeError("input.spatial", ">= 1", xb.shape[1:3])
    out, idx = _backend.kernels.maxpool2(_f64(xb))
    out = out.astype(_out_dtype(xb), copy=False)
    if single:
        return out[0], idx[0]  # n = 0, so flat indices also address the unbatched tensor
    return out, idx


def maxpool2_backward(grad_out: np.ndarray, argmax: np.ndarray, in_shape: tuple) -> np.ndarray:
    single = len(in_shape) == 3
    g = _f64(grad_out[None] if single else grad_out)
    idx = np.ascontiguousarray(argmax[None] if single else argmax, dtype=np.int64)
    shape = (1, *in_shape) if single else tuple(in_shape)
    dx = _backend.kernels.maxpool2_backward(g, idx, shape)
    return dx[0] if single else dx


def upconv2(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-2 transposed convolution producing exactly (2H, 2W).

    ``out[2y+ky, 2x+kx, o] += x[y, x, c] * kernel[ky, kx, c, o]``; contributions
    that land outside the doubled extent (kernels wider than 2) are dropped.
    """
    xb, single = _batched(np.asarray(x))
    kernel, bias = np.asarray(kernel), np.asarray(bias)
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError("kernel.shape", "(k, k, Cin, Cout)", kernel.shape)
    if kernel.shape[2] != xb.shape[-1]:
        raise ShapeError("kernel.in_channels", xb.shape[-1], kernel.shape[2])
    if bias.shape != (kernel.shape[3],):
        raise ShapeError("bias.length", (kernel.shape[3],), bias.shape)
    n, h, w, _ = xb.shape
    k = kernel.shape[0]
    x64, k64 = _f64(xb), _f64(kernel)
    out = np.zeros((n, 2 * h, 2 * w, kernel.shape[3]), dtype=np.float64)
    for ky in range(k):
        rows = len(range(ky, 2 * h, 2))
        for kx in range(k):
            cols = len(range(kx, 2 * w, 2))
            out[:, ky::2, kx::2, :] += x64[:, :rows, :cols, :] @ k64[ky, kx]
    out += _f64(bias)
    out = out.astype(_out_dtype(xb, kernel, bias), copy=False)
    return out[0] if single else out


def upconv2_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray):
    """Gradients of ``upconv2`` w.r.t. (input, kernel, bias), all float64."""
    xb, single = _batched(np.asarray(x))
    gb, _ = _batched(np.asarray(grad_out), "grad_out")
    n, h, w, c = xb.shape
    k = kernel.shape[0]
    x64, k64, g64 = _f64(xb), _f64(kernel), _f64(gb)
    dx = np.zeros_like(x64)
    dk = np.zeros(k64.shape, dtype=np.float64)
    for ky in range(k):
        rows = len(range(ky, 2 * h, 2))
        for kx in range(k):
            cols = len(range(kx, 2 * w, 2))
            g = g64[:, ky::2, kx::2, :]
            dx[:, :rows, :cols, :] += g @ k64[ky, kx].T
            dk[ky, kx] = x64[:, :rows, :cols, :].reshape(-1, c).T @ g.reshape(-1, k64.shape[3])
    db = g64.sum(axis=(0, 1, 2))
    return (dx[0] if single else dx), dk, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """(H, W, C) -> (C,) or (N, H, W, C) -> (N, C), mean over space."""
    x = np.asarray(x)
    axes = (0, 1) if x.ndim == 3 else (1, 2)
    return x.astype(np.float64).mean(axis=axes).astype(_out_dtype(x), copy=False)


def frobenius_norm_sq(t: np.ndarray) -> float:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    return float(t @ t)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul.inner", a.shape[-1], b.shape[0])
    return (_f64(a) @ _f64(b)).astype(_out_dtype(a, b), copy=False)


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    m, v = np.asarray(m), np.asarray(v)
    if m.ndim != 2 or v.ndim != 1:
        raise ShapeError("matvec.rank", "(2, 1)", (m.ndim, v.ndim))
    return matmul(m, v)


def sample_normal(rng: SeededRng, mean: float, std: float, shape) -> np.ndarray:
    return rng.normal(shape, mean, std).astype(STORAGE)
