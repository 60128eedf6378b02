"""Training and measuring model families, one job per (depth, run).

Layout under the output directory::

    data/iid.gmds, data/<shift>.gmds      datasets (iid carries the split)
    models/d<depth>-r<run>/               one directory per job
        checkpoint/  trace.jsonl  eval.json  measures.json
    family.csv                            reduce over the job directories
    timings.json                          wall times (the only non-reproducible file)
    manifest-<command>.json               resolved config per invocation
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import subprocess
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .. import __version__
from .. import synthdata as sd
from ..correlation import FamilyRecord, FamilyResults
from ..measures import MEASURE_NAMES, MeasureReport, compute_all
from ..model import load as load_checkpoint
from ..model import save as save_checkpoint
from ..tensor import backend_name, derive_seed
from ..trainer import TrainingTrace, evaluate, train
from .config import ExperimentConfig

log = logging.getLogger(__name__)

FAMILY_COLUMNS = (
    "experiment_id", "model_id", "depth", "run", "seed", "fold", "status", "failure",
    "stopping_reason", "steps_taken", "train_error", "val_error", "test_error", "gap", "test_risk",
    "n_train", "n_test", "gamma", "sigma", "sigma_mag", *MEASURE_NAMES, "undefined",
)


class HarnessError(RuntimeError):
    pass


@dataclass(frozen=True)
class Job:
    depth: int
    run: int
    seed: int
    fold: int

    @property
    def model_id(self) -> str:
        return f"d{self.depth}-r{self.run}"


def plan_jobs(cfg: ExperimentConfig) -> list[Job]:
    n_folds = 5 if cfg.split == "five-fold" else 1
    jobs = []
    for depth in cfg.depths:
        for run in range(cfg.runs):
            fold = run % n_folds if cfg.fold_mode == "rotate" else 0
            jobs.append(Job(depth, run, derive_seed(cfg.base_seed, depth, run), fold))
    return jobs


# ---- data ------------------------------------------------------------------------

def data_path(out: Path, variant: str = "iid") -> Path:
    return Path(out) / "data" / f"{variant}.gmds"


def generate_data(cfg: ExperimentConfig, out: Path) -> dict[str, Path]:
    """Write the split i.i.d. dataset and every configured shift variant."""
    out = Path(out)
    (out / "data").mkdir(parents=True, exist_ok=True)
    spec = cfg.dataset_spec
    base = sd.with_folds(sd.generate(spec, cfg.data_seed), cfg.split, cfg.data_seed)
    paths = {"iid": sd.write(base, data_path(out, "iid"))}
    variants = sd.shift_variants(spec)
    for name in cfg.shifts:
        shifted = sd.generate(variants[name], cfg.data_seed)
        paths[name] = sd.write(sd.LabeledDataset(shifted.images, shifted.labels, shifted.masks, shifted.spec,
                                                 shifted.seed, base.folds, shifted.meta), data_path(out, name))
    return paths


def load_data(cfg: ExperimentConfig, out: Path, variant: str = "iid") -> sd.LabeledDataset:
    path = data_path(out, variant)
    if not path.exists():
        generate_data(cfg, out)
    ds = sd.read(path)
    expected = cfg.dataset_spec if variant == "iid" else sd.shift_variants(cfg.dataset_spec)[variant]
    if ds.spec != expected or ds.seed != cfg.data_seed:
        raise HarnessError(f"{path} was generated from a different dataset spec or seed; "
                           "regenerate it or use a fresh output directory")
    if ds.folds is None:
        raise HarnessError(f"{path} carries no split assignment")
    return ds


# ---- per-job work ----------------------------------------------------------------------

def model_dir(out: Path, job: Job) -> Path:
    return Path(out) / "models" / job.model_id


def train_job(cfg: ExperimentConfig, job: Job, out: Path, dataset: sd.LabeledDataset) -> dict:
    mdir = model_dir(out, job)
    mdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    status = {"model_id": job.model_id, "depth": job.depth, "run": job.run, "seed": job.seed,
              "fold": job.fold, "status": "ok", "failure": None}
    try:
        ck, trace = train(cfg.network_spec(job.depth), dataset, cfg.train_config(job.seed, job.fold))
    except Exception as exc:  # recorded as a failed run, never dropped silently
        log.error("job %s crashed: %s", job.model_id, exc)
        status.update(status="failed", failure=f"{type(exc).__name__}: {exc}",
                      traceback=traceback.format_exc())
        (mdir / "eval.json").write_text(json.dumps(status, indent=2, sort_keys=True) + "\n")
        return {"train": time.perf_counter() - t0}
    save_checkpoint(ck, mdir / "checkpoint")
    trace.save(mdir / "trace.jsonl")
    status.update(stopping_reason=trace.stopping_reason, steps_taken=trace.steps_taken)
    if trace.failed:
        status.update(status="failed", failure=trace.failure)
    else:
        for part in ("train", "val", "test"):
            if len(dataset.indices(part, job.fold)):
                status[part] = evaluate(ck, dataset, part, job.fold).to_dict()
    (mdir / "eval.json").write_text(json.dumps(status, indent=2, sort_keys=True) + "\n")
    return {"train": time.perf_counter() - t0}


def measure_job(cfg: ExperimentConfig, job: Job, out: Path, dataset: sd.LabeledDataset) -> dict:
    mdir = model_dir(out, job)
    status = json.loads((mdir / "eval.json").read_text())
    if status["status"] != "ok":
        return {}
    ck = load_checkpoint(mdir / "checkpoint")
    trace = TrainingTrace.load(mdir / "trace.jsonl")
    x, y, _ = dataset.subset("train", job.fold)
    report = compute_all(ck, (x, y), trace, cfg.measure_config)
    # timings go to timings.json so measures.json stays identical across reruns
    report.save(mdir / "measures.json", include_timings=False)
    return {f"measure.{k}": v for k, v in report.timings.items()}


def _run_one(args) -> tuple[str, dict]:
    cfg_raw, job, out, do_train, do_measure = args
    cfg = ExperimentConfig(cfg_raw)
    with threadpool_limits(1):
        dataset = load_data(cfg, out)
        times = {}
        if do_train:
            times.update(train_job(cfg, job, out, dataset))
        if do_measure:
            times.update(measure_job(cfg, job, out, dataset))
    return job.model_id, times


def _map_jobs(cfg: ExperimentConfig, out: Path, jobs: int, do_train: bool, do_measure: bool) -> dict:
    work = [(cfg.raw, job, Path(out), do_train, do_measure) for job in plan_jobs(cfg)]
    if jobs <= 1:
        results = [_run_one(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("fork")) as pool:
            results = list(pool.map(_run_one, work))
    return dict(results)


# ---- orchestration --------------------------------------------------------------------

def write_manifest(cfg: ExperimentConfig, out: Path, command: str, extra: dict | None = None) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "package_version": __version__,
        "code_version": code_version(),
        "kernel_backend": backend_name(),
        "seeds": {j.model_id: j.seed for j in plan_jobs(cfg)},
        **(extra or {}),
    }
    path = out / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def code_version() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=10)
        if res.returncode == 0 and res.stdout.strip():
            return res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _store_timings(out: Path, key: str, times: dict) -> None:
    path = Path(out) / "timings.json"
    data = json.loads(path.read_text()) if path.exists() else {}
    data[key] = times
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, out: str | Path, jobs: int = 1, measure: bool | None = None) -> Path:
    """Train (and by default measure) every job, then write family.csv."""
    out = Path(out)
    t0 = time.perf_counter()
    write_manifest(cfg, out, "train-family", {"jobs": jobs})
    load_data(cfg, out)
    do_measure = cfg.measures_enabled if measure is None else measure
    per_job = _map_jobs(cfg, out, jobs, True, do_measure)
    path = write_family(cfg, out)
    _store_timings(out, "train-family", {"total": time.perf_counter() - t0, "jobs": per_job})
    return path


def measure_experiment(cfg: ExperimentConfig, out: str | Path, jobs: int = 1) -> Path:
    """Recompute measure reports for already-trained jobs and rewrite family.csv."""
    out = Path(out)
    missing = [j.model_id for j in plan_jobs(cfg) if not (model_dir(out, j) / "eval.json").exists()]
    if missing:
        raise HarnessError(f"untrained jobs {missing}; run train-family first")
    t0 = time.perf_counter()
    write_manifest(cfg, out, "measure", {"jobs": jobs})
    per_job = _map_jobs(cfg, out, jobs, False, True)
    path = write_family(cfg, out)
    _store_timings(out, "measure", {"total": time.perf_counter() - t0, "jobs": per_job})
    return path


# ---- family.csv ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def family_rows(cfg: ExperimentConfig, out: Path) -> list[dict]:
    rows = []
    for job in plan_jobs(cfg):
        mdir = model_dir(out, job)
        status = json.loads((mdir / "eval.json").read_text())
        row = dict.fromkeys(FAMILY_COLUMNS)
        row.update(experiment_id=cfg.experiment_id, model_id=job.model_id, depth=job.depth, run=job.run,
                   seed=job.seed, fold=job.fold, status=status["status"], failure=status.get("failure"),
                   stopping_reason=status.get("stopping_reason"), steps_taken=status.get("steps_taken"))
        if status["status"] == "ok":
            tr, te = status["train"], status["test"]
            row.update(train_error=tr["error"], test_error=te["error"], gap=te["error"] - tr["error"],
                       test_risk=te["error"], n_train=tr["n"], n_test=te["n"],
                       val_error=status["val"]["error"] if "val" in status else None)
            mpath = mdir / "measures.json"
            if mpath.exists():
                rep = MeasureReport.load(mpath)
                row.update(rep.values)
                row.update(gamma=rep.aux["gamma"], sigma=rep.aux["sigma"], sigma_mag=rep.aux["sigma_mag"])
                row["undefined"] = "|".join(f"{k}: {v}" for k, v in sorted(rep.undefined.items()))
        rows.append(row)
    return rows


def family_csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FAMILY_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in FAMILY_COLUMNS])
    return buf.getvalue()


def write_family(cfg: ExperimentConfig, out: Path) -> Path:
    path = Path(out) / "family.csv"
    path.write_text(family_csv_text(family_rows(cfg, out)))
    return path


_INT_COLUMNS = {"depth", "run", "seed", "fold", "steps_taken", "n_train", "n_test"}
_STR_COLUMNS = {"experiment_id", "model_id", "status", "failure", "stopping_reason", "undefined"}


def read_family_csv(path: str | Path) -> list[dict]:
    """Rows of a family table; empty cells become ``None``. Unknown columns are kept as text."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "model_id" not in reader.fieldnames:
            raise HarnessError(f"{path}: not a family table (no model_id column)")
        rows = []
        for raw in reader:
            row = {}
            for k, v in raw.items():
                if v == "" or v is None:
                    row[k] = None
                elif k in _INT_COLUMNS:
                    row[k] = int(v)
                elif k in _STR_COLUMNS:
                    row[k] = v
                else:
                    try:
                        row[k] = float(v)
                    except ValueError:
                        row[k] = v
            rows.append(row)
    return rows


def family_results(rows: list[dict], g_choice: str = "gap", experiment_id: str = "") -> tuple[FamilyResults, list[dict]]:
    """Usable records for correlation and the failed rows that were excluded."""
    ok, failed = [], []
    for r in rows:
        if (r.get("status") or "ok") != "ok":
            failed.append(r)
            continue
        values = {m: r.get(m) for m in MEASURE_NAMES}
        gap = r.get("gap")
        if gap is None and r.get("test_error") is not None and r.get("train_error") is not None:
            gap = r["test_error"] - r["train_error"]
        risk = r.get("test_risk", r.get("test_error"))
        ok.append(FamilyRecord(int(r["depth"]), str(r["model_id"]), values, gap, risk, int(r["n_test"])))
    return FamilyResults(ok, experiment_id or (rows[0].get("experiment_id") or "" if rows else ""), g_choice), failed


# ---- cross-distribution evaluation -----------------------------------------------------------

TWIN = "iid-twin"


def cross_eval(cfg: ExperimentConfig, out: str | Path, variants: list[str] | None = None) -> tuple[Path, Path]:
    """Evaluate every trained model on the test partition of each dataset variant.

    ``iid`` is the training distribution itself, ``iid-twin`` a fresh draw from
    it, and the shift variants change photometry while keeping every shape.
    """
    out = Path(out)
    variants = variants or ["iid", TWIN, *cfg.shifts]
    write_manifest(cfg, out, "cross-eval", {"variants": variants})
    base = load_data(cfg, out)
    sets = {}
    for v in variants:
        if v == "iid":
            sets[v] = base
        elif v == TWIN:
            twin = sd.generate(cfg.dataset_spec, derive_seed(cfg.data_seed, 7))
            sets[v] = sd.LabeledDataset(twin.images, twin.labels, twin.masks, twin.spec, twin.seed, base.folds,
                                        twin.meta)
        else:
            sets[v] = load_data(cfg, out, v)
    per_model = []
    with threadpool_limits(1):
        for job in plan_jobs(cfg):
            mdir = model_dir(out, job)
            status = json.loads((mdir / "eval.json").read_text())
            if status["status"] != "ok":
                continue
            ck = load_checkpoint(mdir / "checkpoint")
            for v in variants:
                res = evaluate(ck, sets[v], "test", job.fold)
                per_model.append({"model_id": job.model_id, "depth": job.depth, "variant": v,
                                  "accuracy": res.accuracy, "error": res.error, "f1": res.f1,
                                  "sensitivity": res.sensitivity, "specificity": res.specificity, "n": res.n})
    model_cols = ("model_id", "depth", "variant", "accuracy", "error", "f1", "sensitivity", "specificity", "n")
    summary = []
    for depth in cfg.depths:
        for v in variants:
            acc = np.array([r["accuracy"] for r in per_model if r["depth"] == depth and r["variant"] == v])
            summary.append({"depth": depth, "variant": v, "n_models": int(acc.size),
                            "mean_accuracy": float(acc.mean()) if acc.size else None,
                            "std_accuracy": float(acc.std(ddof=1)) if acc.size > 1 else None})
    sum_cols = ("depth", "variant", "n_models", "mean_accuracy", "std_accuracy")
    p1 = _write_rows(out / "cross_eval_models.csv", model_cols, per_model)
    p2 = _write_rows(out / "cross_eval.csv", sum_cols, summary)
    return p2, p1


def _write_rows(path: Path, cols, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    path.write_text(buf.getvalue())
    return path


def mean_sem(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()) if v.size else math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))

