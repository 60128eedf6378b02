"""Independent reference implementations used as test oracles.

Written as plain loops over the defining formulas; nothing here calls into the
package under test.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def jacobi_singular_values(m: np.ndarray, sweeps: int = 60, tol: float = 1e-15) -> np.ndarray:
    """One-sided (Hestenes) Jacobi SVD; returns singular values, descending."""
    a = np.array(m, dtype=np.float64)
    if a.shape[0] < a.shape[1]:
        a = a.T.copy()
    n = a.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = a[:, p] @ a[:, p]
                beta = a[:, q] @ a[:, q]
                gamma = a[:, p] @ a[:, q]
                if alpha == 0.0 or beta == 0.0:
                    continue
                off = max(off, abs(gamma) / math.sqrt(alpha * beta))
                if abs(gamma) < tol * math.sqrt(alpha * beta):
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                ap = a[:, p].copy()
                a[:, p] = c * ap - s * a[:, q]
                a[:, q] = s * ap + c * a[:, q]
        if off < tol:
            break
    return np.sort(np.linalg.norm(a, axis=0))[::-1]


def conv2d_loops(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct windowed sum with zero padding, single image (H, W, C)."""
    h, w, c = x.shape
    ks = k.shape[0]
    p = ks // 2
    out = np.zeros((h, w, k.shape[3]))
    for y in range(h):
        for xx in range(w):
            for o in range(k.shape[3]):
                s = float(b[o])
                for ky in range(ks):
                    for kx in range(ks):
                        iy, ix = y + ky - p, xx + kx - p
                        if 0 <= iy < h and 0 <= ix < w:
                            for ci in range(c):
                                s += float(x[iy, ix, ci]) * float(k[ky, kx, ci, o])
                out[y, xx, o] = s
    return out


def maxpool_loops(x: np.ndarray) -> np.ndarray:
    h, w, c = x.shape
    out = np.zeros(((h + 1) // 2, (w + 1) // 2, c))
    for oy in range(out.shape[0]):
        for ox in range(out.shape[1]):
            for ci in range(c):
                out[oy, ox, ci] = max(
                    x[y, xx, ci]
                    for y in range(2 * oy, min(2 * oy + 2, h))
                    for xx in range(2 * ox, min(2 * ox + 2, w))
                )
    return out


def upconv_scatter(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Scatter-add definition of the stride-2 transposed convolution."""
    h, w, c = x.shape
    ks = k.shape[0]
    out = np.zeros((2 * h, 2 * w, k.shape[3]))
    out += b
    for y, xx, ci, ky, kx, o in itertools.product(
        range(h), range(w), range(c), range(ks), range(ks), range(k.shape[3])
    ):
        oy, ox = 2 * y + ky, 2 * xx + kx
        if oy < 2 * h and ox < 2 * w:
            out[oy, ox, o] += x[y, xx, ci] * k[ky, kx, ci, o]
    return out


def path_enumeration(weights: list[np.ndarray]) -> float:
    """Sum over every input->output path of the product of squared weights.

    ``weights[i]`` has shape (fan_in, fan_out); the network is a bias-free
    linear chain.
    """
    total = 0.0
    sizes = [weights[0].shape[0]] + [w.shape[1] for w in weights]
    for path in itertools.product(*[range(s) for s in sizes]):
        prod = 1.0
        for i, w in enumerate(weights):
            prod *= float(w[path[i], path[i + 1]]) ** 2
        total += prod
    return total


def kendall_pairs(mu, g) -> float:
    n = len(mu)
    s = 0
    for i in range(n):
        for j in range(n):
            if i != j:
                s += _sign(mu[i] - mu[j]) * _sign(g[i] - g[j])
    return s / (n * (n - 1))


def _sign(v) -> int:
    return int(v > 0) - int(v < 0)


def adam_scalar(p: float, grads: list[float], lr: float, b1=0.9, b2=0.999, eps=1e-8) -> float:
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
    return p
