"""Perturbation-robustness search for the flatness measures.

``sigma`` is the largest noise scale whose Monte Carlo estimate of the
perturbed training error stays within ``target_deviation`` of the unperturbed
error. Noise directions are drawn once per Monte Carlo sample and reused for
every candidate scale, so the estimate is a deterministic function of the
scale and the bisection is reproducible.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..model.checkpoint import Checkpoint, devectorize, predict_logits, vectorize, with_params
from ..tensor import SeededRng

UNIFORM, MAGNITUDE = "uniform", "magnitude"
_MODE_STREAM = {UNIFORM: 1, MAGNITUDE: 2}


@dataclass(frozen=True)
class PacBayesConfig:
    """``criterion="deviation"`` bounds E[err(w+u)] by err(w) + target;
    ``"absolute"`` bounds it by target alone."""

    target_deviation: float = 0.1
    mc_samples: int = 10
    bracket: tuple[float, float] = (1e-5, 2.0)
    search_iterations: int = 20
    delta: float = 0.1
    epsilon: float = 1e-3
    seed: int = 0
    criterion: str = "deviation"
    batch_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "bracket", tuple(float(b) for b in self.bracket))
        lo, hi = self.bracket
        if not 0 < lo < hi:
            raise ValueError(f"bracket must satisfy 0 < lo < hi, got {self.bracket}")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")
        if self.criterion not in ("deviation", "absolute"):
            raise ValueError(f"unknown criterion {self.criterion!r}")

    @property
    def log_resolution(self) -> float:
        """Width of the final bisection interval in log(sigma)."""
        lo, hi = self.bracket
        return math.log(hi / lo) / 2 ** self.search_iterations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bracket"] = list(self.bracket)
        return d


@dataclass(frozen=True)
class SigmaResult:
    sigma: float
    edge: str | None          # "upper" / "lower" when the search is pinned to the bracket
    base_error: float
    evaluations: int


def train_error(checkpoint: Checkpoint, images, labels, params=None, batch_size: int = 256) -> float:
    logits = predict_logits(checkpoint, images, batch_size, params)
    return float(np.mean(np.argmax(logits, axis=1) != labels))


class PerturbationProblem:
    """Perturbed training error as a function of the noise scale."""

    def __init__(self, checkpoint: Checkpoint, images, labels, mode: str, cfg: PacBayesConfig):
        if mode not in _MODE_STREAM:
            raise ValueError(f"unknown perturbation mode {mode!r}")
        self.ck, self.images, self.labels, self.mode, self.cfg = checkpoint, images, labels, mode, cfg
        self.vec = vectorize(checkpoint, "classification")
        self.w = self.vec.values.astype(np.float64)
        self.base_error = train_error(checkpoint, images, labels, batch_size=cfg.batch_size)
        self.bound = (self.base_error + cfg.target_deviation if cfg.criterion == "deviation"
                      else cfg.target_deviation)
        self._z: dict[int, np.ndarray] = {}
        self.evaluations = 0

    def direction(self, k: int) -> np.ndarray:
        z = self._z.get(k)
        if z is None:
            z = self._z[k] = SeededRng(self.cfg.seed, (_MODE_STREAM[self.mode], k)).normal(self.w.size)
        return z

    def noise(self, sigma: float, k: int) -> np.ndarray:
        z = self.direction(k)
        if self.mode == UNIFORM:
            return sigma * z
        return z * np.sqrt(sigma ** 2 * self.w ** 2 + self.cfg.epsilon ** 2)

    def error_at(self, sigma: float, k: int) -> float:
        values = self.w + self.noise(sigma, k)
        vec = type(self.vec)(values, self.vec.names, self.vec.offsets, self.vec.shapes)
        params = with_params(self.ck, devectorize(vec))
        self.evaluations += 1
        return train_error(self.ck, self.images, self.labels, params, self.cfg.batch_size)

    def expected_error(self, sigma: float, samples: int | None = None) -> float:
        n = samples or self.cfg.mc_samples
        return float(np.mean([self.error_at(sigma, k) for k in range(n)]))

    def holds(self, sigma: float) -> bool:
        """Whether the MC mean over ``mc_samples`` draws stays within the bound.

        Stops early once the outcome is fixed: errors lie in [0, 1], so the
        partial sum bounds the final mean from both sides.
        """
        n = self.cfg.mc_samples
        limit = self.bound * n
        total = 0.0
        for k in range(n):
            total += self.error_at(sigma, k)
            if total > limit + 1e-12:
                return False
            if total + (n - k - 1) <= limit:
                return True
        return total <= limit + 1e-12


def pacbayes_sigma(checkpoint: Checkpoint, images, labels, mode: str = UNIFORM,
                   cfg: PacBayesConfig = PacBayesConfig()) -> SigmaResult:
    """Bisection on log(sigma) inside ``cfg.bracket`` for ``cfg.search_iterations`` rounds."""
    prob = PerturbationProblem(checkpoint, images, labels, mode, cfg)
    lo, hi = (math.log(b) for b in cfg.bracket)
    if prob.holds(cfg.bracket[1]):
        return SigmaResult(cfg.bracket[1], "upper", prob.base_error, prob.evaluations)
    if not prob.holds(cfg.bracket[0]):
        return SigmaResult(cfg.bracket[0], "lower", prob.base_error, prob.evaluations)
    for _ in range(cfg.search_iterations):
        mid = 0.5 * (lo + hi)
        if prob.holds(math.exp(mid)):
            lo = mid
        else:
            hi = mid
    return SigmaResult(math.exp(lo), None, prob.base_error, prob.evaluations)


def grid_scan_sigma(checkpoint: Checkpoint, images, labels, mode: str = UNIFORM,
                    cfg: PacBayesConfig = PacBayesConfig(), points: int = 256) -> tuple[float, np.ndarray]:
    """Largest point of a log-spaced grid over the bracket satisfying the criterion."""
    prob = PerturbationProblem(checkpoint, images, labels, mode, cfg)
    grid = np.exp(np.linspace(*(math.log(b) for b in cfg.bracket), points))
    ok = np.array([prob.holds(float(s)) for s in grid])
    best = float(grid[ok].max()) if ok.any() else float(grid[0])
    return best, ok


# ---- flatness measures ---------------------------------------------------------

def flatness_measures(sigma: float, sigma_mag: float, w: np.ndarray, w0: np.ndarray, m: int,
                      cfg: PacBayesConfig = PacBayesConfig(),
                      mag_orig_denominator: str = "displacement") -> dict[str, float]:
    """The six PAC-Bayes measures from the two noise scales.

    ``mag_orig_denominator`` selects the per-coordinate denominator of the
    magnitude-aware "orig" variant: ``"displacement"`` uses
    ``|w_i - w0_i|^2`` as printed in the source formula, ``"magnitude"`` uses
    ``|w_i|^2``.
    """
    w = np.asarray(w, dtype=np.float64)
    w0 = np.asarray(w0, dtype=np.float64)
    omega = w.size
    eps2 = cfg.epsilon ** 2
    log_term = math.log((m + 2) / cfg.delta)
    disp = w - w0
    disp_sq = float(disp @ disp)
    norm_sq = float(w @ w)
    s2, t2 = sigma ** 2, sigma_mag ** 2
    den_init = eps2 + t2 * disp ** 2
    if mag_orig_denominator == "displacement":
        den_orig = den_init
    elif mag_orig_denominator == "magnitude":
        den_orig = eps2 + t2 * w ** 2
    else:
        raise ValueError(f"unknown denominator mode {mag_orig_denominator!r}")
    num_init = eps2 + (t2 + 1.0) * disp_sq / omega
    num_orig = eps2 + (t2 + 1.0) * norm_sq / omega
    return {
        "pacbayes.flatness": 1.0 / s2,
        "pacbayes.init": disp_sq / (4.0 * s2) + log_term,
        "pacbayes.orig": norm_sq / (4.0 * s2) + log_term,
        "pacbayes.mag.flatness": 1.0 / t2,
        "pacbayes.mag.init": 0.25 * float(np.sum(np.log(num_init / den_init))) + log_term,
        "pacbayes.mag.orig": 0.25 * float(np.sum(np.log(num_orig / den_orig))) + log_term,
    }
