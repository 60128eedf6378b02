"""Deterministic numeric kernel: NHWC layer ops, norms, and seeded sampling.

Tensors are plain numpy arrays stored as float32; all reductions accumulate in
float64. Convolution and pooling dispatch to a compiled extension when it is
built, otherwise to numpy (see :mod:`genmeasures.tensor._backend`).
"""
from ._backend import available_backends, backend_name, set_backend, use_backend
from .errors import ShapeError
from .linalg import PowerIterationResult, power_iteration, spectral_norm
from .ops import (
    conv2d,
    conv2d_backward,
    frobenius_norm_sq,
    global_avg_pool,
    matmul,
    matvec,
    maxpool2,
    maxpool2_backward,
    maxpool2_with_argmax,
    relu,
    sample_normal,
    upconv2,
    upconv2_backward,
)
from .rng import SeededRng, derive_seed

__all__ = [
    "PowerIterationResult",
    "SeededRng",
    "ShapeError",
    "available_backends",
    "backend_name",
    "conv2d",
    "conv2d_backward",
    "derive_seed",
    "frobenius_norm_sq",
    "global_avg_pool",
    "matmul",
    "matvec",
    "maxpool2",
    "maxpool2_backward",
    "maxpool2_with_argmax",
    "power_iteration",
    "relu",
    "sample_normal",
    "set_backend",
    "spectral_norm",
    "upconv2",
    "upconv2_backward",
    "use_backend",
]
