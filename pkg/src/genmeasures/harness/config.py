"""Experiment configuration: a versioned JSON document merged over per-kind defaults.

Schema (``schema_version`` 1)::

    {
      "schema_version": 1,
      "experiment": "E1" | "E2" | "E3",
      "experiment_id": str,
      "depths": [int, ...],              # encoder blocks per group
      "runs": int,                       # models per depth, >= 2
      "base_seed": int,
      "data": {"spec": {DatasetSpec fields}, "seed": int, "shifts": [str, ...]},
      "split": "holdout" | "five-fold",
      "fold_mode": "seed-only" | "rotate",
      "network": {NetworkSpec fields except blocks},
      "train": {TrainConfig fields except seed and fold},
      "measures": {"enabled": bool, MeasureConfig fields},
      "robust": {RobustConfig fields},
      "g_choices": ["gap", "test-risk"]
    }

Any subset may be given; missing keys take the defaults of the chosen kind.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..correlation import GAP, TEST_RISK, RobustConfig
from ..measures import MeasureConfig
from ..model import NetworkSpec
from ..synthdata import DatasetSpec, shift_variants
from ..trainer import TrainConfig

SCHEMA_VERSION = 1
KINDS = ("E1", "E2", "E3")


class ConfigError(ValueError):
    pass


# desk-scale PAC-Bayes search: fewer Monte Carlo draws and bisection rounds
# than the library defaults keep a 15-model family inside the time budget
_DESK_PACBAYES = {"mc_samples": 5, "search_iterations": 12, "batch_size": 800}

_COMMON: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "experiment_id": "",
    "depths": [1, 2, 3, 4],
    "runs": 5,
    "base_seed": 0,
    "data": {"spec": {}, "seed": 0, "shifts": ["noise2x", "bright_bg", "low_contrast"]},
    "network": {"base_width": 8},
    "robust": {"t": 0.5, "min_weighted_pairs": 5, "clamp_negative_precision": True},
}

KIND_DEFAULTS: dict[str, dict[str, Any]] = {
    "E1": {
        "split": "holdout", "fold_mode": "seed-only",
        "network": {"batchnorm": False, "dropout": 0.0, "decoder": False},
        "train": {"learning_rate": 1e-5, "batch_size": 2, "lam": 1.0, "target_error": 0.01,
                  "patience": None, "max_epochs": 200, "thresholds": [0.01, 0.1]},
        "measures": {"enabled": True, "steps_threshold": 0.01, "pacbayes": _DESK_PACBAYES},
        "g_choices": [GAP],
    },
    "E2": {
        "split": "five-fold", "fold_mode": "rotate",
        "network": {"batchnorm": True, "dropout": 0.25, "decoder": False},
        "train": {"learning_rate": 1e-5, "batch_size": 2, "lam": 1.0, "target_error": None,
                  "patience": 10, "patience_metric": "loss", "max_epochs": 200, "thresholds": [0.01, 0.1]},
        "measures": {"enabled": True, "steps_threshold": 0.1, "pacbayes": _DESK_PACBAYES},
        "g_choices": [GAP, TEST_RISK],
    },
    "E3": {
        "split": "five-fold", "fold_mode": "rotate",
        "network": {"batchnorm": True, "dropout": 0.25, "decoder": True},
        "train": {"learning_rate": 1e-4, "batch_size": 2, "lam": 0.2, "target_error": None,
                  "patience": 10, "patience_metric": "loss", "max_epochs": 200, "thresholds": [0.01, 0.1]},
        "measures": {"enabled": True, "steps_threshold": 0.1, "pacbayes": _DESK_PACBAYES},
        "g_choices": [GAP, TEST_RISK],
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict = field(repr=False)

    # ---- typed views -------------------------------------------------------------
    @property
    def kind(self) -> str:
        return self.raw["experiment"]

    @property
    def experiment_id(self) -> str:
        return self.raw["experiment_id"] or f"{self.kind}-desk"

    @property
    def depths(self) -> list[int]:
        return list(self.raw["depths"])

    @property
    def runs(self) -> int:
        return int(self.raw["runs"])

    @property
    def base_seed(self) -> int:
        return int(self.raw["base_seed"])

    @property
    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(**self.raw["data"]["spec"])

    @property
    def data_seed(self) -> int:
        return int(self.raw["data"]["seed"])

    @property
    def shifts(self) -> list[str]:
        return list(self.raw["data"]["shifts"])

    @property
    def split(self) -> str:
        return self.raw["split"]

    @property
    def fold_mode(self) -> str:
        return self.raw["fold_mode"]

    @property
    def measures_enabled(self) -> bool:
        return bool(self.raw["measures"].get("enabled", True))

    @property
    def measure_config(self) -> MeasureConfig:
        d = {k: v for k, v in self.raw["measures"].items() if k != "enabled"}
        return MeasureConfig.from_dict(d)

    @property
    def robust_config(self) -> RobustConfig:
        return RobustConfig(**self.raw["robust"])

    @property
    def g_choices(self) -> list[str]:
        return list(self.raw["g_choices"])

    def network_spec(self, depth: int) -> NetworkSpec:
        return NetworkSpec(blocks=depth, input_size=self.dataset_spec.image_size, **self.raw["network"])

    def train_config(self, seed: int, fold: int) -> TrainConfig:
        return TrainConfig(**self.raw["train"], seed=seed, fold=fold)

    # ---- persistence ----------------------------------------------------------------
    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def validate(self) -> None:
        if self.raw.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.raw.get('schema_version')!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"experiment must be one of {KINDS}")
        if not self.depths or any(not isinstance(d, int) or d < 1 for d in self.depths):
            raise ConfigError("depths must be a non-empty list of positive integers")
        if len(set(self.depths)) != len(self.depths):
            raise ConfigError("depths must not repeat")
        if self.runs < 2:
            raise ConfigError("runs must be at least 2")
        if self.split not in ("holdout", "five-fold"):
            raise ConfigError(f"unknown split {self.split!r}")
        if self.fold_mode not in ("seed-only", "rotate"):
            raise ConfigError(f"unknown fold_mode {self.fold_mode!r}")
        if self.split == "holdout" and self.fold_mode == "rotate":
            raise ConfigError("a holdout split has a single fold; use fold_mode seed-only")
        if any(g not in (GAP, TEST_RISK) for g in self.g_choices) or not self.g_choices:
            raise ConfigError("g_choices must list 'gap' and/or 'test-risk'")
        spec = self.dataset_spec  # raises DatasetError on bad values
        known = set(shift_variants(spec))
        bad = [s for s in self.shifts if s not in known]
        if bad:
            raise ConfigError(f"unknown shift variants {bad}; known: {sorted(known)}")
        if self.raw["network"].get("decoder") and not spec.with_masks:
            raise ConfigError("a decoder needs a dataset with masks")
        if self.raw["train"].get("lam", 1.0) < 1.0 and not spec.with_masks:
            raise ConfigError("a Dice term needs a dataset with masks")
        for d in self.depths:
            self.network_spec(d)
        self.train_config(0, 0)
        self.measure_config
        self.robust_config


def resolve(user: dict | None = None, kind: str | None = None) -> ExperimentConfig:
    """Defaults of the experiment kind overlaid with ``user``, validated."""
    user = dict(user or {})
    kind = kind or user.get("experiment", "E1")
    if kind not in KINDS:
        raise ConfigError(f"experiment must be one of {KINDS}, got {kind!r}")
    raw = _merge(_merge(_COMMON, KIND_DEFAULTS[kind]), user)
    raw["experiment"] = kind
    unknown = set(raw) - set(_COMMON) - set(KIND_DEFAULTS[kind]) - {"experiment"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = ExperimentConfig(raw)
    try:
        cfg.validate()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        user = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    return resolve(_merge(user, overrides or {}))
