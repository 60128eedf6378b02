"""Rank agreement between complexity measures and generalization across a model family.

Three statistics are provided. ``kendall_tau`` averages sign agreement over
all ordered model pairs. ``granulated_psi`` restricts that average to pairs
drawn from different groups and averages per group pair. ``robust_sign_error``
counts discordant cross-group pairs, weighting each by how confidently the
finite test sets resolve the generalization difference (Hoeffding).
Undefined measure values drop the affected models for that measure only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GAP, TEST_RISK = "gap", "test-risk"
BANDS = (("low", 0.0), ("moderate", 0.3), ("high", 0.5))


class CorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class FamilyRecord:
    group: int
    model_id: str
    values: dict[str, float | None]
    gap: float
    test_risk: float
    n: int


@dataclass
class FamilyResults:
    records: list[FamilyRecord]
    experiment_id: str = ""
    g_choice: str = GAP

    def __post_init__(self):
        if self.g_choice not in (GAP, TEST_RISK):
            raise CorrelationError(f"unknown generalization target {self.g_choice!r}")
        for r in self.records:
            if r.n <= 0:
                raise CorrelationError(f"record {r.model_id} has non-positive test-set size")

    def g(self, rec: FamilyRecord, g_choice: str | None = None) -> float:
        return rec.gap if (g_choice or self.g_choice) == GAP else rec.test_risk

    def usable(self, measure: str) -> tuple[list[FamilyRecord], int]:
        """Records with a defined value of ``measure`` and the number excluded."""
        keep = [r for r in self.records if _defined(r.values.get(measure))]
        return keep, len(self.records) - len(keep)

    @property
    def groups(self) -> list[int]:
        return sorted({r.group for r in self.records})


def _defined(v) -> bool:
    return v is not None and math.isfinite(v)


@dataclass(frozen=True)
class RobustConfig:
    t: float = 0.5
    min_weighted_pairs: int = 5
    clamp_negative_precision: bool = True

    def __post_init__(self):
        if not 0.0 <= self.t < 1.0:
            raise CorrelationError("t must lie in [0, 1)")
        if self.min_weighted_pairs < 1:
            raise CorrelationError("min_weighted_pairs must be at least 1")


# ---- Kendall ----------------------------------------------------------------------

def kendall_tau(mu, g) -> float:
    """Mean of sign(dmu) * sign(dg) over ordered pairs; ties count zero."""
    mu = np.asarray(mu, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if mu.shape != g.shape or mu.ndim != 1:
        raise CorrelationError("mu and g must be 1-d and of equal length")
    n = mu.size
    if n < 2:
        raise CorrelationError("Kendall tau needs at least two models")
    s = np.sign(mu[:, None] - mu[None, :]) * np.sign(g[:, None] - g[None, :])
    return float(s.sum() / (n * (n - 1)))


def _cross_signs(mu_a, g_a, mu_b, g_b) -> np.ndarray:
    return (np.sign(np.subtract.outer(mu_a, mu_b)) * np.sign(np.subtract.outer(g_a, g_b)))


# ---- granulated ---------------------------------------------------------------------

@dataclass
class PsiResult:
    psi: dict[tuple[int, int], float]
    Psi: float | None
    skipped_groups: list[int] = field(default_factory=list)


def granulated_psi(family: FamilyResults, measure: str, g_choice: str | None = None) -> PsiResult:
    """Per group pair the mean sign agreement over cross-group model pairs, and their average."""
    recs, _ = family.usable(measure)
    by_group = _split(recs, family, measure, g_choice)
    skipped = [gr for gr in family.groups if gr not in by_group]
    keys = sorted(by_group)
    psi = {}
    for a in range(len(keys)):
        for b in range(a + 1, len(keys)):
            (mu_a, g_a), (mu_b, g_b) = by_group[keys[a]], by_group[keys[b]]
            psi[(keys[a], keys[b])] = float(_cross_signs(mu_a, g_a, mu_b, g_b).mean())
    total = float(np.mean(list(psi.values()))) if psi else None
    return PsiResult(psi, total, skipped)


def _split(recs, family, measure, g_choice):
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for gr in sorted({r.group for r in recs}):
        sub = [r for r in recs if r.group == gr]
        out[gr] = (np.array([r.values[measure] for r in sub], dtype=np.float64),
                   np.array([family.g(r, g_choice) for r in sub], dtype=np.float64))
    return out


# ---- robust sign error -------------------------------------------------------------------

def hoeffding_chi(dg, n, clamp: bool = True):
    """Squared Hoeffding confidence that a risk difference ``dg`` is resolved with ``n`` samples.

    Without the clamp a zero difference would score a full 1.
    """
    dg = np.asarray(dg, dtype=np.float64)
    inner = 1.0 - 2.0 * np.exp(-2.0 * np.asarray(n, dtype=np.float64) * (dg / 2.0) ** 2)
    if clamp:
        inner = np.maximum(inner, 0.0)
    out = inner ** 2
    return float(out) if out.ndim == 0 else out


@dataclass
class RobustResult:
    phi: dict[tuple[int, int], float]
    mean: float | None
    max: float | None
    p90: float | None
    discarded_pairs: dict[tuple[int, int], int]
    cdf: list[tuple[float, float]]

    @property
    def insufficient_precision(self) -> bool:
        return not self.phi


def robust_sign_error(family: FamilyResults, measure: str, cfg: RobustConfig = RobustConfig(),
                      g_choice: str | None = None) -> RobustResult:
    recs, _ = family.usable(measure)
    groups = sorted({r.group for r in recs})
    phi: dict[tuple[int, int], float] = {}
    discarded: dict[tuple[int, int], int] = {}
    for a in range(len(groups)):
        for b in range(a + 1, len(groups)):
            ra = [r for r in recs if r.group == groups[a]]
            rb = [r for r in recs if r.group == groups[b]]
            mu_a = np.array([r.values[measure] for r in ra], dtype=np.float64)
            mu_b = np.array([r.values[measure] for r in rb], dtype=np.float64)
            g_a = np.array([family.g(r, g_choice) for r in ra], dtype=np.float64)
            g_b = np.array([family.g(r, g_choice) for r in rb], dtype=np.float64)
            n = np.minimum.outer(np.array([r.n for r in ra]), np.array([r.n for r in rb]))
            chi = hoeffding_chi(np.abs(np.subtract.outer(g_a, g_b)), n, cfg.clamp_negative_precision)
            kappa = np.maximum(0.0, np.asarray(chi) - cfg.t)
            live = kappa > 0
            key = (groups[a], groups[b])
            if int(live.sum()) < cfg.min_weighted_pairs:
                discarded[key] = int(live.sum())
                continue
            s = _cross_signs(mu_a, g_a, mu_b, g_b)
            phi[key] = float(np.sum(kappa * (1.0 - s) / 2.0) / np.sum(kappa))
    if not phi:
        return RobustResult({}, None, None, None, discarded, [])
    vals = np.array(sorted(phi.values()))
    k90 = max(1, math.ceil(0.9 * vals.size - 1e-12))
    cdf = [(float(v), (i + 1) / vals.size) for i, v in enumerate(vals)]
    return RobustResult(phi, float(vals.mean()), float(vals.max()), float(vals[k90 - 1]), discarded, cdf)


# ---- table -----------------------------------------------------------------------------

def band(tau: float | None) -> str:
    """Strength class of |tau|: low below 0.3, moderate below 0.5, high otherwise."""
    if tau is None:
        return "undefined"
    label = BANDS[0][0]
    for name, lo in BANDS:
        if abs(tau) >= lo:
            label = name
    return label


@dataclass
class CorrelationRow:
    measure: str
    tau: float | None
    Psi: float | None
    robust: RobustResult
    band: str
    n_used: int
    n_excluded: int
    notes: str = ""


@dataclass
class CorrelationReport:
    rows: list[CorrelationRow]
    g_choice: str
    experiment_id: str
    config: RobustConfig

    def row(self, measure: str) -> CorrelationRow:
        for r in self.rows:
            if r.measure == measure:
                return r
        raise KeyError(measure)


def correlation_table(family: FamilyResults, measures, g_choice: str | None = None,
                      cfg: RobustConfig = RobustConfig()) -> CorrelationReport:
    g_choice = g_choice or family.g_choice
    rows = []
    for m in measures:
        recs, excluded = family.usable(m)
        notes = []
        tau = None
        if len(recs) >= 2:
            tau = kendall_tau([r.values[m] for r in recs], [family.g(r, g_choice) for r in recs])
        else:
            notes.append("fewer than two defined values")
        psi = granulated_psi(family, m, g_choice)
        if psi.skipped_groups:
            notes.append("groups without defined values: " + ",".join(map(str, psi.skipped_groups)))
        rob = robust_sign_error(family, m, cfg, g_choice)
        if rob.insufficient_precision:
            notes.append("insufficient precision for robust sign error")
        if excluded:
            notes.append(f"{excluded} models excluded as undefined")
        rows.append(CorrelationRow(m, tau, psi.Psi, rob, band(tau), len(recs), excluded, "; ".join(notes)))
    return CorrelationReport(rows, g_choice, family.experiment_id, cfg)
