"""Checkpoints: weights, their initial snapshot, metadata, and on-disk format.

On disk a checkpoint is a directory holding ``manifest.json`` plus two raw
blobs, ``weights.bin`` and ``init_weights.bin``, each the concatenation of all
tensors (trainable parameters and batch-norm buffers) in manifest order as
little-endian IEEE-754 float32.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from ..tensor import SeededRng
from .network import forward_batched, run_graph
from .spec import Graph, NetworkSpec, SequentialSpec, spec_from_dict

MAGIC = "GMCK1"
FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointFormatError(ValueError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass


@dataclass
class Checkpoint:
    """Trained weights plus the initialization snapshot they started from.

    ``weights`` and ``init_weights`` map parameter/buffer names to float32
    arrays in graph order. ``meta`` carries training bookkeeping (seed,
    group/run ids, steps, stopping reason, ...).
    """

    spec: NetworkSpec | SequentialSpec
    weights: dict[str, np.ndarray]
    init_weights: dict[str, np.ndarray]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if list(self.weights) != list(self.init_weights):
            raise ValueError("weights and init_weights must list the same tensors")
        for name, w in self.weights.items():
            if w.shape != self.init_weights[name].shape:
                raise ValueError(f"shape mismatch between weights and init_weights for {name}")
        step = self.meta.get("step_at_error_threshold")
        if step is not None and step > self.meta.get("steps_taken", step):
            raise ValueError("step_at_error_threshold exceeds steps_taken")

    @property
    def graph(self) -> Graph:
        g = getattr(self, "_graph", None)
        if g is None:
            g = self.spec.graph()
            object.__setattr__(self, "_graph", g)
        return g

    def trainable_names(self, branch: str = "all") -> list[str]:
        return list(self.graph.param_shapes(branch))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.spec == other.spec and self.meta == other.meta
                and _tensors_equal(self.weights, other.weights)
                and _tensors_equal(self.init_weights, other.init_weights))


def _tensors_equal(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> bool:
    return list(a) == list(b) and all(
        a[k].dtype == b[k].dtype and a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes()
        for k in a)


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if len(shape) == 4:
        k, _, cin, _ = shape
        # a stride-2 transposed 2x2 kernel feeds each output from exactly one tap
        return cin if name.endswith(".up.w") else k * k * cin
    return shape[0]


def build(spec: NetworkSpec | SequentialSpec, rng: SeededRng) -> Checkpoint:
    """Kaiming-normal weights (std = sqrt(2 / fan_in)), zero biases, identity batch-norm."""
    graph = spec.graph()
    weights: dict[str, np.ndarray] = {}
    buffers = graph.buffer_shapes()
    for i, node in enumerate(graph.nodes):
        for name, shape in node.param_shapes().items():
            if name.endswith(".w"):
                std = math.sqrt(2.0 / max(_fan_in(name, shape), 1))
                w = rng.child(i).normal(shape, 0.0, std)
            elif name.endswith(".gamma"):
                w = np.ones(shape)
            else:
                w = np.zeros(shape)
            weights[name] = w.astype(np.float32)
        for name in node.buffer_shapes():
            fill = 1.0 if name.endswith(".var") else 0.0
            weights[name] = np.full(buffers[name], fill, dtype=np.float32)
    init = {k: v.copy() for k, v in weights.items()}
    return Checkpoint(spec, weights, init, {"seed": rng.seed, "stream": list(rng.stream)})


class Outputs(NamedTuple):
    logits: np.ndarray
    masks: np.ndarray | None


def forward(checkpoint: Checkpoint, batch: np.ndarray, mode: str = "eval",
            rng: SeededRng | None = None) -> Outputs:
    """Logits ``(N, 2)`` and, for networks with a decoder, masks ``(N, H, W)``.

    ``batch`` is ``(N, H, W, 1)`` for image networks. Train mode applies
    dropout (drawing from ``rng``) and batch statistics for batch-norm, and
    updates the running statistics held in ``checkpoint.weights``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    graph = checkpoint.graph
    batch = np.asarray(batch)
    if tuple(batch.shape[1:]) != tuple(graph.input_shape):
        raise ValueError(f"batch shape {batch.shape[1:]} does not match network input {graph.input_shape}")
    outs = ("logits", "mask") if graph.mask is not None else ("logits",)
    res = run_graph(graph, checkpoint.weights, batch, train=mode == "train", rng=rng, outputs=outs)
    masks = res.get("mask")
    return Outputs(res["logits"].astype(np.float32),
                   None if masks is None else masks.astype(np.float32))


def predict_logits(checkpoint: Checkpoint, images: np.ndarray, batch_size: int = 256,
                   params: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Eval-mode float64 logits for a whole dataset (classification branch only)."""
    return forward_batched(checkpoint.graph, checkpoint.weights if params is None else params,
                           images, batch_size)


def forward_squared_on_ones(checkpoint: Checkpoint) -> np.ndarray:
    """Classification output of the network with every weight and bias squared, fed all ones.

    Batch-norm and dropout act as the identity. All intermediate activations
    are non-negative, so ReLU and max pooling never clip.
    """
    graph = checkpoint.graph
    squared = {name: np.square(w.astype(np.float64)) for name, w in checkpoint.weights.items()
               if name in graph.param_shapes("classification")}
    ones = np.ones((1, *graph.input_shape))
    out = run_graph(graph, squared, ones, bypass_bn=True)["logits"]
    return out[0]


# ---- flat parameter vectors -------------------------------------------------------

@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    names: tuple[str, ...]
    offsets: tuple[tuple[int, int], ...]
    shapes: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return int(self.values.size)


def vectorize(checkpoint: Checkpoint, branch: str = "all", which: str = "weights") -> ParamVector:
    """Concatenate trainable parameters (batch-norm buffers excluded) into one vector."""
    source = checkpoint.weights if which == "weights" else checkpoint.init_weights
    names = tuple(checkpoint.trainable_names(branch))
    parts, offsets, shapes, pos = [], [], [], 0
    for name in names:
        a = source[name]
        parts.append(a.reshape(-1))
        offsets.append((pos, pos + a.size))
        shapes.append(a.shape)
        pos += a.size
    values = np.concatenate(parts) if parts else np.zeros(0, dtype=np.float32)
    return ParamVector(values, names, tuple(offsets), tuple(shapes))


def devectorize(vector: ParamVector) -> dict[str, np.ndarray]:
    return {name: vector.values[a:b].reshape(shape)
            for name, (a, b), shape in zip(vector.names, vector.offsets, vector.shapes)}


def with_params(checkpoint: Checkpoint, updates: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Parameter mapping equal to the checkpoint's weights with ``updates`` overlaid."""
    merged = dict(checkpoint.weights)
    merged.update(updates)
    return merged


# ---- persistence --------------------------------------------------------------

def _blob(tensors: dict[str, np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(t, dtype=_LE_F32).tobytes() for t in tensors.values())


def save(checkpoint: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    trainable = set(checkpoint.trainable_names())
    entries, offset = [], 0
    for name, t in checkpoint.weights.items():
        entries.append({"name": name, "shape": list(t.shape), "offset": offset,
                        "count": int(t.size), "trainable": name in trainable})
        offset += int(t.size)
    wb, ib = _blob(checkpoint.weights), _blob(checkpoint.init_weights)
    manifest = {
        "magic": MAGIC,
        "version": FORMAT_VERSION,
        "dtype": "float32-le",
        "spec": checkpoint.spec.to_dict(),
        "tensors": entries,
        "total_count": offset,
        "sha256": {"weights.bin": hashlib.sha256(wb).hexdigest(),
                   "init_weights.bin": hashlib.sha256(ib).hexdigest()},
        "meta": checkpoint.meta,
    }
    (path / "weights.bin").write_bytes(wb)
    (path / "init_weights.bin").write_bytes(ib)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint manifest in {path}: {exc}") from exc
    if manifest.get("magic") != MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {manifest.get('magic')!r}, expected {MAGIC!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {manifest.get('version')!r} is not supported (expected {FORMAT_VERSION})")
    total = manifest["total_count"]
    tensors = []
    for fname in ("weights.bin", "init_weights.bin"):
        raw = (path / fname).read_bytes()
        if len(raw) != 4 * total:
            raise CheckpointFormatError(f"{fname}: expected {4 * total} bytes, found {len(raw)}")
        if hashlib.sha256(raw).hexdigest() != manifest["sha256"][fname]:
            raise CheckpointFormatError(f"{fname}: checksum mismatch")
        flat = np.frombuffer(raw, dtype=_LE_F32).astype(np.float32)
        tensors.append({e["name"]: flat[e["offset"]:e["offset"] + e["count"]].reshape(e["shape"]).copy()
                        for e in manifest["tensors"]})
    return Checkpoint(spec_from_dict(manifest["spec"]), tensors[0], tensors[1], manifest["meta"])
