from __future__ import annotations

import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model.checkpoint import Checkpoint, vectorize
from ..tensor.linalg import DEFAULT_MAX_ITER
from .norms import (frobenius_measures, layer_norms, margin, output_measure, path_measures,
                    spectral_measures, vc_measure)
from .pacbayes import MAGNITUDE, UNIFORM, PacBayesConfig, flatness_measures, pacbayes_sigma

log = logging.getLogger(__name__)

REPORT_SCHEMA = "genmeasures.measure-report/1"

MEASURE_NAMES = (
    "num.params", "inverse.margin",
    "log.prod.of.spec", "log.prod.of.spec.over.margin", "log.sum.of.spec",
    "log.sum.of.spec.over.margin", "log.spec.init.main", "log.spec.orig.main", "fro.over.spec",
    "fro.dist", "log.prod.of.fro", "log.prod.of.fro.over.margin", "log.sum.of.fro",
    "log.sum.of.fro.over.margin", "dist.spec.init", "param.norm",
    "path.norm", "path.norm.over.margin",
    "pacbayes.flatness", "pacbayes.init", "pacbayes.orig",
    "pacbayes.mag.flatness", "pacbayes.mag.init", "pacbayes.mag.orig",
    "steps.to.error",
)
# dist.spec.init is listed under this longer name in some published tables
ALIASES = {"dist.spec.init": "log.dist.spec.init"}

_PACBAYES = MEASURE_NAMES[18:24]


@dataclass(frozen=True)
class MeasureConfig:
    pacbayes: PacBayesConfig = field(default_factory=PacBayesConfig)
    steps_threshold: float = 0.01
    mag_orig_denominator: str = "displacement"
    power_tol: float = 1e-12
    power_max_iter: int = DEFAULT_MAX_ITER

    def to_dict(self) -> dict:
        return {"pacbayes": self.pacbayes.to_dict(), "steps_threshold": self.steps_threshold,
                "mag_orig_denominator": self.mag_orig_denominator,
                "power_tol": self.power_tol, "power_max_iter": self.power_max_iter}

    @classmethod
    def from_dict(cls, d: dict) -> "MeasureConfig":
        d = dict(d)
        pb = PacBayesConfig(**d.pop("pacbayes", {}))
        return cls(pacbayes=pb, **d)


@dataclass
class MeasureReport:
    """Measure values keyed by name; ``None`` marks an undefined value whose reason is in ``undefined``."""

    values: dict[str, float | None]
    undefined: dict[str, str]
    aux: dict[str, float | int | str | None]
    timings: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(MEASURE_NAMES) ^ set(self.values)
        if missing:
            raise ValueError(f"report must hold exactly the named measures; mismatch: {sorted(missing)}")
        self.values = {n: self.values[n] for n in MEASURE_NAMES}

    def __getitem__(self, name: str) -> float | None:
        return self.values[name]

    def is_defined(self, name: str) -> bool:
        return name not in self.undefined

    def to_record(self, include_timings: bool = True) -> dict:
        rec = {"schema": REPORT_SCHEMA, "values": dict(self.values),
               "undefined": dict(sorted(self.undefined.items())), "aux": dict(self.aux)}
        if include_timings:
            rec["timings"] = dict(self.timings)
        return rec

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_record(include_timings), sort_keys=False, allow_nan=False)

    @classmethod
    def from_record(cls, rec: dict) -> "MeasureReport":
        if rec.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {rec.get('schema')!r}")
        return cls(dict(rec["values"]), dict(rec["undefined"]), dict(rec["aux"]), dict(rec.get("timings", {})))

    @classmethod
    def from_json(cls, text: str) -> "MeasureReport":
        return cls.from_record(json.loads(text))

    def save(self, path: str | Path, include_timings: bool = True) -> Path:
        path = Path(path)
        path.write_text(self.to_json(include_timings) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "MeasureReport":
        return cls.from_json(Path(path).read_text())


def steps_measure(trace, threshold: float) -> int | None:
    """First training step at which the train error was at or below ``threshold``.

    Uses the crossing the trace recorded when present, else scans its epochs;
    later excursions above the threshold do not move the crossing.
    """
    fc = getattr(trace, "first_crossing", {}) or {}
    for thr, step in fc.items():
        if math.isclose(float(thr), threshold, rel_tol=0, abs_tol=1e-12):
            return step
    for rec in trace.epochs:
        if rec.train_error <= threshold:
            return rec.step
    return None


def _finite_or_flag(values: dict, undefined: dict) -> None:
    for name, v in values.items():
        if v is not None and not math.isfinite(v):
            values[name] = None
            undefined.setdefault(name, "non-finite value")


def compute_all(checkpoint: Checkpoint, trainset: tuple[np.ndarray, np.ndarray], trace=None,
                cfg: MeasureConfig = MeasureConfig()) -> MeasureReport:
    """All 25 measures for one trained model.

    ``trainset`` is the (images, labels) pair the model was trained on. A
    missing ``trace`` leaves steps.to.error undefined.
    """
    images, labels = trainset
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty training set")
    values: dict[str, float | None] = {}
    undefined: dict[str, str] = {}
    timings: dict[str, float] = {}

    @contextmanager
    def timed(group):
        t0 = time.perf_counter()
        yield
        timings[group] = time.perf_counter() - t0
        log.info("measure group %s took %.3fs", group, timings[group])

    with timed("margin"):
        gamma = margin(checkpoint, images, labels)
        values["num.params"] = float(vc_measure(checkpoint.spec))
        if gamma > 0:
            values["inverse.margin"] = output_measure(gamma)
        else:
            values["inverse.margin"], undefined["inverse.margin"] = None, "margin <= 0"

    with timed("norms"):
        layers = layer_norms(checkpoint, cfg.power_tol, cfg.power_max_iter)
        for part in (spectral_measures(layers, gamma), frobenius_measures(layers, gamma)):
            values.update(part[0])
            undefined.update(part[1])

    with timed("path"):
        v, u = path_measures(checkpoint, gamma)
        values.update(v)
        undefined.update(u)

    with timed("pacbayes"):
        pb = cfg.pacbayes
        s = pacbayes_sigma(checkpoint, images, labels, UNIFORM, pb)
        s_mag = pacbayes_sigma(checkpoint, images, labels, MAGNITUDE, pb)
        w = vectorize(checkpoint, "classification").values
        w0 = vectorize(checkpoint, "classification", which="init").values
        flat = flatness_measures(s.sigma, s_mag.sigma, w, w0, len(labels), pb, cfg.mag_orig_denominator)
        values.update(flat)
        for name in _PACBAYES:
            edge = s_mag.edge if ".mag." in name else s.edge
            if edge is not None:
                values[name], undefined[name] = None, f"sigma search at {edge} bracket edge"

    step = steps_measure(trace, cfg.steps_threshold) if trace is not None else None
    if step is None:
        values["steps.to.error"] = None
        undefined["steps.to.error"] = ("no training trace" if trace is None
                                       else f"train error never reached {cfg.steps_threshold}")
    else:
        values["steps.to.error"] = float(step)

    _finite_or_flag(values, undefined)
    aux = {"gamma": gamma, "sigma": s.sigma, "sigma_mag": s_mag.sigma, "d": len(layers),
           "m": int(len(labels)), "omega": int(w.size), "sigma_edge": s.edge,
           "sigma_mag_edge": s_mag.edge, "base_train_error": s.base_error}
    return MeasureReport(values, undefined, aux, timings)
