"""Pure-numpy implementations of the hot kernels.

Signatures and semantics match the compiled ``_ckernels`` module exactly:
float64 C-contiguous NHWC inputs, float64 outputs, and the same argmax rule for
pooling (first maximum in row-major window order).
"""
from __future__ import annotations

import numpy as np


def conv2d_same(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    n, h, w, _ = x.shape
    k = kernel.shape[0]
    p = k // 2
    out = np.empty((n, h, w, kernel.shape[3]), dtype=np.float64)
    out[...] = bias
    if out.size == 0:
        return out
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    for dy in range(k):
        for dx in range(k):
            out += xp[:, dy:dy + h, dx:dx + w, :] @ kernel[dy, dx]
    return out


def conv2d_kernel_grad(x: np.ndarray, grad_out: np.ndarray, k: int) -> np.ndarray:
    n, h, w, c = x.shape
    o = grad_out.shape[3]
    dk = np.zeros((k, k, c, o), dtype=np.float64)
    if x.size == 0 or grad_out.size == 0:
        return dk
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    g = grad_out.reshape(-1, o)
    for dy in range(k):
        for dx in range(k):
            dk[dy, dx] = xp[:, dy:dy + h, dx:dx + w, :].reshape(-1, c).T @ g
    return dk


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, h, w, c = x.shape
    oh, ow = (h + 1) // 2, (w + 1) // 2
    xp = np.full((n, 2 * oh, 2 * ow, c), -np.inf)
    xp[:, :h, :w, :] = x
    # windows laid out as (n, oh, ow, c, 4) in (0,0),(0,1),(1,0),(1,1) order
    win = xp.reshape(n, oh, 2, ow, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, oh, ow, c, 4)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    ni, oy, ox, ci = np.indices((n, oh, ow, c), sparse=True)
    y = 2 * oy + arg // 2
    xx = 2 * ox + arg % 2
    idx = ((ni * h + y) * w + xx) * c + ci
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool2_backward(grad_out: np.ndarray, idx: np.ndarray, in_shape: tuple) -> np.ndarray:
    grad_in = np.zeros(int(np.prod(in_shape)), dtype=np.float64)
    np.add.at(grad_in, idx.reshape(-1), grad_out.reshape(-1))
    return grad_in.reshape(in_shape)
