"""Reverse-mode gradients over the tape recorded by :func:`run_graph`."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .. import tensor as T
from ..model.checkpoint import Checkpoint
from ..model.network import run_graph
from ..model.spec import INPUT, Graph, Node
from ..tensor import SeededRng
from .losses import cross_entropy_with_grad, dice_loss_with_grad


def _conv_b(node, params, cache, g):
    dx, dk, db = T.conv2d_backward(cache, params[f"{node.name}.w"], g)
    out = {f"{node.name}.w": dk}
    if node.bias:
        out[f"{node.name}.b"] = db
    return (dx,), out


def _upconv_b(node, params, cache, g):
    dx, dk, db = T.upconv2_backward(cache, params[f"{node.name}.w"], g)
    out = {f"{node.name}.w": dk}
    if node.bias:
        out[f"{node.name}.b"] = db
    return (dx,), out


def _dense_b(node, params, cache, g):
    w = np.asarray(params[f"{node.name}.w"], dtype=np.float64)
    out = {f"{node.name}.w": cache.T @ g}
    if node.bias:
        out[f"{node.name}.b"] = g.sum(axis=0)
    return (g @ w.T,), out


def _bn_b(node, params, cache, g):
    if cache is None:
        return (g,), {}
    xhat, inv_std, gamma, train = cache
    axes = tuple(range(g.ndim - 1))
    grads = {f"{node.name}.gamma": (g * xhat).sum(axis=axes), f"{node.name}.beta": g.sum(axis=axes)}
    dxhat = g * gamma
    if not train:
        return (dxhat * inv_std,), grads
    m = g.size // g.shape[-1]
    dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return (dx,), grads


def _relu_b(node, params, mask, g):
    return (g * mask,), {}


def _pool_b(node, params, cache, g):
    idx, shape = cache
    return (T.maxpool2_backward(g, idx, shape),), {}


def _gap_b(node, params, shape, g):
    n, h, w, c = shape
    return (np.broadcast_to(g[:, None, None, :] / (h * w), shape).copy(),), {}


def _dropout_b(node, params, keep, g):
    return (g if keep is None else g * keep,), {}


def _concat_b(node, params, cache, g):
    up_shape, cu = cache
    dup = np.zeros(up_shape)
    h, w = g.shape[1:3]
    dup[:, :h, :w, :] = g[..., :cu]
    return (dup, g[..., cu:]), {}


def _sigmoid_b(node, params, out, g):
    return (g * out * (1.0 - out),), {}


BACKWARD: dict[str, Callable] = {
    "conv": _conv_b, "upconv": _upconv_b, "dense": _dense_b, "bn": _bn_b, "relu": _relu_b,
    "pool": _pool_b, "gap": _gap_b, "dropout": _dropout_b, "concat": _concat_b, "sigmoid": _sigmoid_b,
}


def backward(graph: Graph, params: Mapping[str, np.ndarray], tape: list,
             seeds: dict[int, np.ndarray]) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream gradients ``seeds`` at output nodes."""
    upstream: dict[int, np.ndarray] = {k: np.asarray(v, dtype=np.float64) for k, v in seeds.items()}
    grads: dict[str, np.ndarray] = {}
    for i, cache in reversed(tape):
        g = upstream.pop(i, None)
        if g is None:
            continue
        node: Node = graph.nodes[i]
        dins, dparams = BACKWARD[node.op](node, params, cache, g)
        for name, d in dparams.items():
            grads[name] = grads[name] + d if name in grads else d
        for j, d in zip(node.inputs, dins):
            if j == INPUT:
                continue
            upstream[j] = upstream[j] + d if j in upstream else d
    return grads


def loss_and_grads(checkpoint: Checkpoint, images: np.ndarray, labels: np.ndarray,
                   masks: np.ndarray | None = None, lam: float = 1.0, *, train: bool = True,
                   rng: SeededRng | None = None,
                   params: Mapping[str, np.ndarray] | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Combined loss ``lam * CE + (1 - lam) * Dice`` and gradients for every trainable tensor.

    Parameters outside the path to a live loss term get zero gradients, so the
    result always mirrors the trainable weight shapes.
    """
    graph = checkpoint.graph
    params = checkpoint.weights if params is None else params
    use_dice = lam < 1.0
    if use_dice and (graph.mask is None or masks is None):
        raise ValueError("a Dice term needs a decoder network and ground-truth masks")
    tape: list = []
    outs = ("logits", "mask") if use_dice else ("logits",)
    res = run_graph(graph, params, images, train=train, rng=rng, tape=tape, outputs=outs)
    seeds: dict[int, np.ndarray] = {}
    loss = 0.0
    if lam > 0:
        ce, d_logits = cross_entropy_with_grad(res["logits"], labels)
        loss += lam * ce
        seeds[graph.logits] = lam * d_logits
    if use_dice:
        dl, d_mask = dice_loss_with_grad(res["mask"], masks)
        loss += (1.0 - lam) * dl
        seeds[graph.mask] = (1.0 - lam) * d_mask[..., None]
    grads = backward(graph, params, tape, seeds)
    full = {name: grads.get(name, np.zeros(shape)) for name, shape in graph.param_shapes().items()}
    return loss, full


def backprop(checkpoint: Checkpoint, batch, loss_kind: str = "ce", lam: float = 0.2,
             rng: SeededRng | None = None) -> dict[str, np.ndarray]:
    """Gradients of one loss on ``batch = (images, labels[, masks])``.

    ``loss_kind`` is ``"ce"``, ``"dice"`` or ``"combined"`` (weighted by ``lam``).
    Runs in train mode, so batch-norm uses batch statistics.
    """
    images, labels, *rest = batch
    masks = rest[0] if rest else None
    weight = {"ce": 1.0, "dice": 0.0, "combined": lam}[loss_kind]
    params = {k: v.copy() for k, v in checkpoint.weights.items()}  # keep running stats untouched
    return loss_and_grads(checkpoint, images, labels, masks, weight, rng=rng, params=params)[1]
