from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SeededRng:
    """A reproducible random stream identified by ``(seed, stream)``.

    Streams are built from ``numpy.random.SeedSequence`` spawn keys, so distinct
    stream ids are statistically independent and a given pair yields the same
    PCG64 sequence on every platform. ``child`` derives nested streams, e.g.
    ``SeededRng(seed).child(epoch)``.
    """

    seed: int
    stream: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if isinstance(self.stream, int):
            object.__setattr__(self, "stream", (self.stream,))
        ss = np.random.SeedSequence(int(self.seed) & 0xFFFFFFFFFFFFFFFF,
                                    spawn_key=tuple(int(s) for s in self.stream))
        object.__setattr__(self, "_gen", np.random.Generator(np.random.PCG64(ss)))

    def child(self, *keys: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + tuple(int(k) for k in keys))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return mean + std * self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def derive_seed(base_seed: int, *keys: int) -> int:
    """Deterministic 63-bit seed for a job identified by ``keys``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in keys))
    hi, lo = (int(v) for v in ss.generate_state(2, dtype=np.uint32))
    return ((hi << 32) | lo) >> 1
