"""Classification and segmentation losses with their gradients.

Each ``*_with_grad`` function returns ``(loss, dloss/dinput)`` for the mean
over the batch.
"""
from __future__ import annotations

import numpy as np

DICE_EPS = 1e-6


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy_with_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    logp = log_softmax(logits)
    n = len(labels)
    idx = np.asarray(labels, dtype=np.int64)
    loss = -logp[np.arange(n), idx].mean()
    grad = np.exp(logp)
    grad[np.arange(n), idx] -= 1.0
    return max(float(loss), 0.0), grad / n


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy over two or more logits, via log-sum-exp."""
    return cross_entropy_with_grad(logits, labels)[0]


def dice_loss_with_grad(pred: np.ndarray, gt: np.ndarray, eps: float = DICE_EPS) -> tuple[float, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    axes = tuple(range(1, p.ndim))
    inter = (p * g).sum(axis=axes)
    denom = p.sum(axis=axes) + g.sum(axis=axes) + eps
    per_sample = 1.0 - (2.0 * inter + eps) / denom
    n = p.shape[0]
    shape = (n,) + (1,) * (p.ndim - 1)
    grad = -(2.0 * g * denom.reshape(shape) - (2.0 * inter + eps).reshape(shape)) / denom.reshape(shape) ** 2
    return float(np.clip(per_sample, 0.0, 1.0).mean()), grad / n


def dice_loss(pred: np.ndarray, gt: np.ndarray, eps: float = DICE_EPS) -> float:
    """Mean soft Dice loss ``1 - (2 sum(p g) + eps) / (sum p + sum g + eps)``."""
    return dice_loss_with_grad(pred, gt, eps)[0]


def combined_loss(logits, labels, pred_masks, gt_masks, lam: float) -> float:
    """``lam * cross_entropy + (1 - lam) * dice``; a vanishing term is not evaluated."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    total = 0.0
    if lam > 0:
        total += lam * cross_entropy(logits, labels)
    if lam < 1:
        total += (1.0 - lam) * dice_loss(pred_masks, gt_masks)
    return total
