"""Graph execution: forward passes in train/eval mode with an optional tape."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .. import tensor as T
from ..tensor import SeededRng
from .spec import INPUT, Graph, Node

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class NonFiniteActivationError(FloatingPointError):
    def __init__(self, layer: str):
        self.layer = layer
        super().__init__(f"non-finite activation produced by layer {layer!r}")


class Context:
    """Per-call execution options shared by all layer functions."""

    __slots__ = ("train", "rng", "bypass_bn", "params")

    def __init__(self, params, train: bool, rng: SeededRng | None, bypass_bn: bool):
        self.params = params
        self.train = train
        self.rng = rng
        self.bypass_bn = bypass_bn


def _zeros_bias(node: Node, params) -> np.ndarray:
    b = params.get(f"{node.name}.b")
    return b if b is not None else np.zeros(node.cout)


def _conv(node, ctx, x):
    return T.conv2d(x, ctx.params[f"{node.name}.w"], _zeros_bias(node, ctx.params)), x


def _upconv(node, ctx, x):
    return T.upconv2(x, ctx.params[f"{node.name}.w"], _zeros_bias(node, ctx.params)), x


def _dense(node, ctx, x):
    out = x @ np.asarray(ctx.params[f"{node.name}.w"], dtype=np.float64)
    b = ctx.params.get(f"{node.name}.b")
    if b is not None:
        out = out + b
    return out, x


def _bn(node, ctx, x):
    if ctx.bypass_bn:
        return x, None
    p = ctx.params
    gamma, beta = p[f"{node.name}.gamma"].astype(np.float64), p[f"{node.name}.beta"].astype(np.float64)
    axes = tuple(range(x.ndim - 1))
    if ctx.train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        n = x.size // x.shape[-1]
        rm, rv = p[f"{node.name}.mean"], p[f"{node.name}.var"]
        unbiased = var * n / max(n - 1, 1)
        rm[...] = (1 - BN_MOMENTUM) * rm + BN_MOMENTUM * mean
        rv[...] = (1 - BN_MOMENTUM) * rv + BN_MOMENTUM * unbiased
    else:
        mean = p[f"{node.name}.mean"].astype(np.float64)
        var = p[f"{node.name}.var"].astype(np.float64)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, ctx.train)


def _relu(node, ctx, x):
    return np.maximum(x, 0.0), x > 0


def _pool(node, ctx, x):
    out, idx = T.maxpool2_with_argmax(x)
    return out, (idx, x.shape)


def _gap(node, ctx, x):
    return x.mean(axis=(1, 2)), x.shape


def _dropout(node, ctx, x):
    if not ctx.train or node.rate == 0.0:
        return x, None
    if ctx.rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = (ctx.rng.uniform(size=x.shape) >= node.rate) / (1.0 - node.rate)
    return x * keep, keep


def _concat(node, ctx, up, skip):
    h, w = skip.shape[1:3]
    return np.concatenate([up[:, :h, :w, :], skip], axis=-1), (up.shape, up.shape[-1])


def _sigmoid(node, ctx, x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


FORWARD: dict[str, Callable] = {
    "conv": _conv, "upconv": _upconv, "dense": _dense, "bn": _bn, "relu": _relu,
    "pool": _pool, "gap": _gap, "dropout": _dropout, "concat": _concat, "sigmoid": _sigmoid,
}


def run_graph(graph: Graph, params: Mapping[str, np.ndarray], x: np.ndarray, *,
              train: bool = False, rng: SeededRng | None = None, tape: list | None = None,
              outputs: tuple[str, ...] = ("logits",), bypass_bn: bool = False,
              check_finite: bool = True) -> dict[str, np.ndarray]:
    """Execute the graph on a batch, computing only what ``outputs`` need.

    In train mode batch-norm uses batch statistics and updates the running
    buffers in ``params`` in place. When ``tape`` is a list, one
    ``(node_index, cache)`` entry is appended per executed node for backprop.
    """
    targets = {"logits": graph.logits, "mask": graph.mask}
    want = tuple(targets[o] for o in outputs)
    if any(w is None for w in want):
        raise ValueError(f"graph has no {outputs} output")
    needed = graph.ancestors(want)
    last_use: dict[int, int] = {}
    if tape is None:
        for i in sorted(needed):
            for j in graph.nodes[i].inputs:
                last_use[j] = i
    ctx = Context(params, train, rng, bypass_bn)
    vals: dict[int, np.ndarray] = {INPUT: np.asarray(x, dtype=np.float64)}
    for i, node in enumerate(graph.nodes):
        if i not in needed:
            continue
        out, cache = FORWARD[node.op](node, ctx, *(vals[j] for j in node.inputs))
        if check_finite and not np.isfinite(out).all():
            raise NonFiniteActivationError(node.name or f"{node.op}#{i}")
        vals[i] = out
        if tape is not None:
            tape.append((i, cache))
        else:
            for j in node.inputs:
                if last_use.get(j) == i and j not in want:
                    vals.pop(j, None)
    result = {name: vals[targets[name]] for name in outputs}
    if "mask" in result:
        result["mask"] = result["mask"][..., 0]
    return result


def forward_batched(graph: Graph, params, x: np.ndarray, batch_size: int = 256, **kw) -> np.ndarray:
    """Eval-mode logits over a large array, computed in fixed-size chunks."""
    parts = [run_graph(graph, params, x[i:i + batch_size], **kw)["logits"]
             for i in range(0, len(x), batch_size)]
    if not parts:
        return np.zeros((0, graph.nodes[graph.logits].cout))
    return np.concatenate(parts, axis=0)
