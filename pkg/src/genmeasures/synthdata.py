"""Synthetic binary image classification data with segmentation masks.

Class 0 images contain a filled disk, class 1 images a ring; both sit on a flat
background with additive Gaussian noise. Shift variants change only the
photometric parameters (noise, background, contrast), never the shape
semantics, to emulate the same task acquired under different settings.

Binary layout of a ``GMDS1`` file (all integers little-endian)::

    b"GMDS1"                 magic
    u16                      format version
    u32 n, u32 H, u32 W      counts and image size
    u32 has_masks, u32 n_folds
    u32 meta_len, bytes      UTF-8 JSON with the DatasetSpec and seed
    f32[n*H*W]               images
    u8[n]                    labels
    u8[ceil(n*H*W/8)]        mask bitmap (packbits, little bit order), if has_masks
    i8[n_folds*n]            partition codes (0 train, 1 test, 2 val), if n_folds
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import SeededRng

MAGIC = b"GMDS1"
FORMAT_VERSION = 1
TRAIN, TEST, VAL = 0, 1, 2
PARTITIONS = {"train": TRAIN, "test": TEST, "val": VAL}


class DatasetError(ValueError):
    pass


class DatasetFormatError(DatasetError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    n_samples: int = 1000
    image_size: tuple[int, int] = (32, 32)
    class_balance: float = 0.5
    radius_range: tuple[float, float] = (6.0, 11.0)
    ring_thickness_range: tuple[float, float] = (1.0, 2.0)
    noise_std: float = 0.1
    background_level: float = 0.2
    intensity_range: tuple[float, float] = (0.6, 0.9)
    with_masks: bool = True
    shift_tag: str = "iid"

    def __post_init__(self):
        for key in ("image_size", "radius_range", "ring_thickness_range", "intensity_range"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        self.validate()

    @property
    def n_positive(self) -> int:
        return math.floor(self.n_samples * self.class_balance)

    def validate(self) -> None:
        if self.n_samples < 2:
            raise DatasetError("n_samples must be at least 2")
        if not 0.0 <= self.class_balance <= 1.0:
            raise DatasetError("class_balance must be in [0, 1]")
        if self.n_positive < 1 or self.n_positive > self.n_samples - 1:
            raise DatasetError(f"class_balance {self.class_balance} leaves a class empty for n={self.n_samples}")
        h, w = self.image_size
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise DatasetError(f"invalid radius range {self.radius_range}")
        if hi >= min(h, w) / 2:
            raise DatasetError(f"radius {hi} does not fit in a {h}x{w} image (must be < {min(h, w) / 2})")
        tlo, thi = self.ring_thickness_range
        if not 0 < tlo <= thi or thi >= lo:
            raise DatasetError(f"ring thickness {self.ring_thickness_range} must be positive and below the radius")
        if self.noise_std < 0:
            raise DatasetError("noise_std must be non-negative")


@dataclass
class LabeledDataset:
    images: np.ndarray                  # (N, H, W, 1) float32 in [0, 1]
    labels: np.ndarray                  # (N,) uint8
    masks: np.ndarray | None            # (N, H, W) uint8 or None
    spec: DatasetSpec
    seed: int
    folds: np.ndarray | None = None     # (F, N) int8 partition codes
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()

        return (self.spec == other.spec and self.seed == other.seed
                and same(self.images, other.images) and same(self.labels, other.labels)
                and same(self.masks, other.masks) and same(self.folds, other.folds))

    def indices(self, partition: str, fold: int = 0) -> np.ndarray:
        if partition == "all":
            return np.arange(len(self))
        if self.folds is None:
            raise DatasetError("dataset has no split assignment; call make_folds first")
        return np.flatnonzero(self.folds[fold] == PARTITIONS[partition])

    def subset(self, partition: str, fold: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        idx = self.indices(partition, fold)
        masks = None if self.masks is None else self.masks[idx]
        return self.images[idx], self.labels[idx], masks


def _render(spec: DatasetSpec, label: int, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    h, w = spec.image_size
    # geometry is drawn first so photometric shifts keep identical shapes
    r = rng.uniform(*spec.radius_range)
    thick = rng.uniform(*spec.ring_thickness_range)
    cy = rng.uniform(r, h - r)
    cx = rng.uniform(r, w - r)
    level = rng.uniform(*spec.intensity_range)
    noise = rng.normal((h, w), 0.0, 1.0)
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.hypot(yy + 0.5 - cy, xx + 0.5 - cx)
    mask = dist <= r
    if label == 1:
        mask &= dist > r - thick
    img = np.where(mask, level, spec.background_level) + spec.noise_std * noise
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask.astype(np.uint8)


def generate(spec: DatasetSpec, seed: int) -> LabeledDataset:
    """Deterministic in ``(spec, seed)``; ``floor(n * class_balance)`` samples are positive."""
    spec.validate()
    n = spec.n_samples
    labels = np.zeros(n, dtype=np.uint8)
    labels[:spec.n_positive] = 1
    labels = labels[SeededRng(seed, (0,)).permutation(n)]
    h, w = spec.image_size
    images = np.empty((n, h, w, 1), dtype=np.float32)
    masks = np.empty((n, h, w), dtype=np.uint8)
    for i in range(n):
        images[i, :, :, 0], masks[i] = _render(spec, int(labels[i]), SeededRng(seed, (1, i)))
    return LabeledDataset(images, labels, masks if spec.with_masks else None, spec, int(seed))


def shift_variants(spec: DatasetSpec) -> dict[str, DatasetSpec]:
    """Three photometric shifts of ``spec`` with unchanged shape semantics."""
    lo, hi = spec.intensity_range
    bg = spec.background_level
    mid = (lo + hi) / 2
    return {
        "noise2x": replace(spec, noise_std=2 * spec.noise_std, shift_tag="noise2x"),
        "bright_bg": replace(spec, background_level=min(bg + 0.2, lo - 0.05), shift_tag="bright_bg"),
        "low_contrast": replace(spec, intensity_range=(bg + 0.5 * (lo - bg), bg + 0.5 * (mid - bg)),
                                shift_tag="low_contrast"),
    }


# ---- splits -------------------------------------------------------------------

def make_folds(dataset: LabeledDataset, scheme: str, seed: int) -> np.ndarray:
    """Partition codes per fold, shape ``(F, N)``.

    ``holdout``: one fold, 80% train / 20% test (test count rounded half up).
    ``five-fold``: five folds; fold k tests on chunk k, validates on chunk
    k+2 (mod 5) and trains on the remaining 60%. Pairing chunks two apart
    keeps every partition within one sample of nominal for any n. Order comes from a seeded
    random key per sample with ties broken by sample index.
    """
    n = len(dataset)
    keys = SeededRng(seed, (2,)).uniform(size=n)
    order = np.lexsort((np.arange(n), keys))
    if scheme == "holdout":
        n_test = int(math.floor(0.2 * n + 0.5))
        if n_test < 1 or n - n_test < 1:
            raise DatasetError(f"holdout split impossible for n={n}")
        folds = np.full((1, n), TRAIN, dtype=np.int8)
        folds[0, order[:n_test]] = TEST
    elif scheme == "five-fold":
        if n < 5:
            raise DatasetError(f"five-fold split needs at least 5 samples, got {n}")
        chunks = np.array_split(order, 5)
        folds = np.full((5, n), TRAIN, dtype=np.int8)
        for k in range(5):
            folds[k, chunks[k]] = TEST
            folds[k, chunks[(k + 2) % 5]] = VAL
    else:
        raise DatasetError(f"unknown split scheme {scheme!r}")
    return folds


def with_folds(dataset: LabeledDataset, scheme: str, seed: int) -> LabeledDataset:
    folds = make_folds(dataset, scheme, seed)
    return LabeledDataset(dataset.images, dataset.labels, dataset.masks, dataset.spec,
                          dataset.seed, folds, {**dataset.meta, "split_scheme": scheme, "split_seed": seed})


# ---- persistence --------------------------------------------------------------

def _spec_to_json(ds: LabeledDataset) -> bytes:
    return json.dumps({"spec": asdict(ds.spec), "seed": ds.seed, "meta": ds.meta},
                      sort_keys=True).encode("utf-8")


def write(dataset: LabeledDataset, path: str | Path) -> Path:
    path = Path(path)
    n, h, w = len(dataset), *dataset.images.shape[1:3]
    meta = _spec_to_json(dataset)
    n_folds = 0 if dataset.folds is None else dataset.folds.shape[0]
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION),
             struct.pack("<5I", n, h, w, int(dataset.masks is not None), n_folds),
             struct.pack("<I", len(meta)), meta,
             np.ascontiguousarray(dataset.images, dtype="<f4").tobytes(),
             np.ascontiguousarray(dataset.labels, dtype=np.uint8).tobytes()]
    if dataset.masks is not None:
        parts.append(np.packbits(dataset.masks.reshape(-1).astype(bool), bitorder="little").tobytes())
    if n_folds:
        parts.append(np.ascontiguousarray(dataset.folds, dtype=np.int8).tobytes())
    path.write_bytes(b"".join(parts))
    return path


def read(path: str | Path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise DatasetFormatError(f"bad magic {raw[:5]!r}, expected {MAGIC!r}")
    pos = 5
    try:
        (version,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if version != FORMAT_VERSION:
            raise DatasetFormatError(f"unsupported GMDS version {version}")
        n, h, w, has_masks, n_folds = struct.unpack_from("<5I", raw, pos)
        pos += 20
        (meta_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
    except struct.error as exc:
        raise DatasetFormatError(f"truncated header: {exc}") from exc
    pix = n * h * w
    expected = pos + meta_len + 4 * pix + n + (math.ceil(pix / 8) if has_masks else 0) + n_folds * n
    if len(raw) != expected:
        raise DatasetFormatError(f"length mismatch: header implies {expected} bytes, file has {len(raw)}")
    info = json.loads(raw[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    images = np.frombuffer(raw, dtype="<f4", count=pix, offset=pos).astype(np.float32).reshape(n, h, w, 1)
    pos += 4 * pix
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=pos).copy()
    pos += n
    masks = None
    if has_masks:
        nb = math.ceil(pix / 8)
        bits = np.frombuffer(raw, dtype=np.uint8, count=nb, offset=pos)
        masks = np.unpackbits(bits, count=pix, bitorder="little").reshape(n, h, w)
        pos += nb
    folds = None
    if n_folds:
        folds = np.frombuffer(raw, dtype=np.int8, count=n_folds * n, offset=pos).copy().reshape(n_folds, n)
    return LabeledDataset(images, labels, masks, DatasetSpec(**info["spec"]), int(info["seed"]),
                          folds, info.get("meta", {}))
