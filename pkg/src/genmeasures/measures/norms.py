"""Margin, parameter-count, norm-based and path-based complexity measures."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..model.checkpoint import Checkpoint, forward_squared_on_ones, predict_logits
from ..model.spec import param_count
from ..tensor import SeededRng, power_iteration
from ..tensor.linalg import DEFAULT_MAX_ITER

Undefined = dict  # measure name -> reason


def margins(checkpoint: Checkpoint, images: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample ``logit[true] - logit[other]`` in eval mode."""
    logits = predict_logits(checkpoint, images)
    idx = np.asarray(labels, dtype=np.int64)
    n = np.arange(len(idx))
    true = logits[n, idx]
    other = logits.copy()
    other[n, idx] = -np.inf
    return true - other.max(axis=1)


def percentile_nearest_rank(values: np.ndarray, q: float = 0.1) -> float:
    """Element ``ceil(q * m)`` (1-based) of the ascending stable sort."""
    v = np.sort(np.asarray(values, dtype=np.float64), kind="stable")
    if v.size == 0:
        raise ValueError("percentile of an empty set")
    k = max(1, math.ceil(q * v.size - 1e-12))
    return float(v[k - 1])


def margin(checkpoint: Checkpoint, images: np.ndarray, labels: np.ndarray) -> float:
    return percentile_nearest_rank(margins(checkpoint, images, labels), 0.1)


def vc_measure(spec) -> int:
    """Trainable parameters of the whole network: conv, dense, batch-norm affine and any decoder."""
    return param_count(spec, "all")


def output_measure(gamma: float) -> float:
    """Squared inverse margin."""
    return 1.0 / gamma ** 2


# ---- layer matrices ------------------------------------------------------------

@dataclass(frozen=True)
class LayerNorms:
    name: str
    spec: float            # ||W||_2
    fro_sq: float          # ||W||_F^2
    dist_fro_sq: float     # ||W - W0||_F^2
    dist_spec: float       # ||W - W0||_2


def layer_matrix(w: np.ndarray) -> np.ndarray:
    """Conv kernels (k, k, Cin, Cout) become Cout x (k^2 Cin); dense weights pass through."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 4:
        return w.reshape(-1, w.shape[3]).T
    return w


def norms_of(matrices, init_matrices, names=None, tol: float = 1e-12, max_iter: int = DEFAULT_MAX_ITER) -> list[LayerNorms]:
    out = []
    for i, (w, w0) in enumerate(zip(matrices, init_matrices)):
        w = layer_matrix(w)
        d = w - layer_matrix(w0)
        rng = SeededRng(0, (i,))
        out.append(LayerNorms(
            names[i] if names else f"layer{i}",
            power_iteration(w, tol, max_iter, rng).value,
            float(np.sum(w * w)),
            float(np.sum(d * d)),
            power_iteration(d, tol, max_iter, rng).value,
        ))
    return out


def layer_norms(checkpoint: Checkpoint, tol: float = 1e-12, max_iter: int = DEFAULT_MAX_ITER) -> list[LayerNorms]:
    """Norms of every weight layer on the classification path, biases excluded."""
    nodes = checkpoint.graph.weight_layers("classification")
    keys = [f"{n.name}.w" for n in nodes]
    return norms_of([checkpoint.weights[k] for k in keys], [checkpoint.init_weights[k] for k in keys],
                    [n.name for n in nodes], tol, max_iter)


def _log_margin_sq(gamma: float) -> float | None:
    return math.log(gamma * gamma) if gamma > 0 else None


def spectral_measures(layers: list[LayerNorms], gamma: float) -> tuple[dict[str, float | None], Undefined]:
    d = len(layers)
    vals: dict[str, float | None] = {}
    why: Undefined = {}
    names = ("log.prod.of.spec", "log.prod.of.spec.over.margin", "log.sum.of.spec",
             "log.sum.of.spec.over.margin", "log.spec.init.main", "log.spec.orig.main", "fro.over.spec")
    if d == 0 or any(l.spec == 0.0 for l in layers):
        for n in names:
            vals[n], why[n] = None, "zero spectral norm" if d else "no weight layers"
        return vals, why
    log_prod = sum(2.0 * math.log(l.spec) for l in layers)
    ratio_fro = sum(l.fro_sq / l.spec ** 2 for l in layers)
    ratio_dist = sum(l.dist_fro_sq / l.spec ** 2 for l in layers)
    lg = _log_margin_sq(gamma)
    vals["log.prod.of.spec"] = log_prod
    vals["log.sum.of.spec"] = math.log(d) + log_prod / d
    vals["fro.over.spec"] = ratio_fro
    if lg is None:
        for n in ("log.prod.of.spec.over.margin", "log.sum.of.spec.over.margin",
                  "log.spec.init.main", "log.spec.orig.main"):
            vals[n], why[n] = None, "margin <= 0"
    else:
        vals["log.prod.of.spec.over.margin"] = log_prod - lg
        vals["log.sum.of.spec.over.margin"] = math.log(d) + (log_prod - lg) / d
        if ratio_dist > 0:
            vals["log.spec.init.main"] = log_prod + math.log(ratio_dist) - lg
        else:
            vals["log.spec.init.main"], why["log.spec.init.main"] = None, "zero displacement from init"
        vals["log.spec.orig.main"] = log_prod + math.log(ratio_fro) - lg
    return {n: vals[n] for n in names}, why


def frobenius_measures(layers: list[LayerNorms], gamma: float) -> tuple[dict[str, float | None], Undefined]:
    d = len(layers)
    vals: dict[str, float | None] = {
        "fro.dist": sum(l.dist_fro_sq for l in layers),
        "dist.spec.init": sum(l.dist_spec ** 2 for l in layers),
        "param.norm": sum(l.fro_sq for l in layers),
    }
    why: Undefined = {}
    logs = ("log.prod.of.fro", "log.prod.of.fro.over.margin", "log.sum.of.fro", "log.sum.of.fro.over.margin")
    if d == 0 or any(l.fro_sq == 0.0 for l in layers):
        for n in logs:
            vals[n], why[n] = None, "zero Frobenius norm" if d else "no weight layers"
    else:
        log_prod = sum(math.log(l.fro_sq) for l in layers)
        lg = _log_margin_sq(gamma)
        vals["log.prod.of.fro"] = log_prod
        vals["log.sum.of.fro"] = math.log(d) + log_prod / d
        if lg is None:
            for n in ("log.prod.of.fro.over.margin", "log.sum.of.fro.over.margin"):
                vals[n], why[n] = None, "margin <= 0"
        else:
            vals["log.prod.of.fro.over.margin"] = log_prod - lg
            vals["log.sum.of.fro.over.margin"] = math.log(d) + (log_prod - lg) / d
    order = ("fro.dist", "log.prod.of.fro", "log.prod.of.fro.over.margin", "log.sum.of.fro",
             "log.sum.of.fro.over.margin", "dist.spec.init", "param.norm")
    return {n: vals[n] for n in order}, why


def path_measures(checkpoint: Checkpoint, gamma: float) -> tuple[dict[str, float | None], Undefined]:
    total = float(np.sum(forward_squared_on_ones(checkpoint)))
    if gamma > 0:
        return {"path.norm": total, "path.norm.over.margin": total / gamma ** 2}, {}
    return {"path.norm": total, "path.norm.over.margin": None}, {"path.norm.over.margin": "margin <= 0"}
