from __future__ import annotations

import csv
import io
import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from genmeasures.correlation import RobustConfig, correlation_table
from genmeasures.harness import (FAMILY_COLUMNS, ConfigError, HarnessError, cross_eval, family_results,
                                 load_config, load_data, plan_jobs, read_family_csv, resolve, run_experiment)
from genmeasures.harness.cli import run as cli
from genmeasures.harness.experiment import family_csv_text, measure_experiment
from genmeasures.harness.report import (bar_chart_svg, cdf_csv, correlate, parse_report, table_csv,
                                        table_text)
from genmeasures.measures import MEASURE_NAMES

TINY = {
    "experiment": "E1",
    "depths": [1, 2],
    "runs": 2,
    "data": {"spec": {"n_samples": 160}, "shifts": ["noise2x"]},
    "train": {"max_epochs": 2, "target_error": 0.0},
    "measures": {"pacbayes": {"mc_samples": 2, "search_iterations": 4, "batch_size": 128}},
}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg = resolve(TINY)
    run_experiment(cfg, out)
    return cfg, out


# ---- config -------------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["E1", "E2", "E3"])
def test_kind_defaults_validate(kind):
    cfg = resolve(kind=kind)
    assert cfg.kind == kind
    assert cfg.runs >= 2 and cfg.depths
    tc = cfg.train_config(1, 0)
    assert tc.batch_size == 2


def test_kind_specific_settings():
    e1, e2, e3 = (resolve(kind=k) for k in ("E1", "E2", "E3"))
    assert e1.train_config(0, 0).learning_rate == 1e-5 and e1.train_config(0, 0).target_error == 0.01
    assert not e1.network_spec(1).batchnorm and e1.network_spec(1).dropout == 0
    assert e2.network_spec(1).batchnorm and e2.train_config(0, 0).patience is not None
    assert e3.network_spec(1).decoder and e3.train_config(0, 0).lam == 0.2
    assert e3.train_config(0, 0).learning_rate == 1e-4
    assert e1.g_choices == ["gap"] and e2.g_choices == ["gap", "test-risk"]


@pytest.mark.parametrize("bad", [
    {"runs": 1},
    {"depths": []},
    {"depths": [1, 1]},
    {"schema_version": 2},
    {"bogus": 3},
    {"split": "holdout", "fold_mode": "rotate"},
    {"g_choices": ["loss"]},
    {"data": {"shifts": ["sepia"]}},
    {"train": {"learning_rate": -1.0}},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        resolve(bad)


def test_decoder_requires_masks():
    with pytest.raises(ConfigError):
        resolve({"data": {"spec": {"with_masks": False}}}, kind="E3")


def test_load_config_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text(json.dumps({"experiment": "E2", "runs": 3}))
    cfg = load_config(p, {"base_seed": 9})
    assert (cfg.kind, cfg.runs, cfg.base_seed) == ("E2", 3, 9)


def test_config_json_round_trip():
    cfg = resolve(TINY)
    again = resolve(json.loads(cfg.to_json()))
    assert again.config_hash() == cfg.config_hash()


# ---- job planning ---------------------------------------------------------------------------

def test_plan_jobs_seed_only_and_rotation():
    e1 = plan_jobs(resolve({"depths": [1, 2], "runs": 3}))
    assert len(e1) == 6 and {j.fold for j in e1} == {0}
    assert len({j.seed for j in e1}) == 6
    e2 = plan_jobs(resolve({"depths": [2], "runs": 7}, kind="E2"))
    assert [j.fold for j in e2] == [0, 1, 2, 3, 4, 0, 1]


def test_seeds_depend_only_on_base_seed_depth_and_run():
    a = plan_jobs(resolve({"depths": [1, 2], "runs": 2}))
    b = plan_jobs(resolve({"depths": [2], "runs": 2}))
    assert [j.seed for j in a if j.depth == 2] == [j.seed for j in b]
    c = plan_jobs(resolve({"depths": [1, 2], "runs": 2, "base_seed": 1}))
    assert {j.seed for j in a}.isdisjoint({j.seed for j in c})


# ---- family runs -----------------------------------------------------------------------------

def test_counting_contract(tiny_run):
    cfg, out = tiny_run
    assert len(list((out / "models").glob("*/checkpoint/manifest.json"))) == 4
    assert len(list((out / "models").glob("*/measures.json"))) == 4
    assert [p.name for p in out.glob("family*")] == ["family.csv"]
    rows = read_family_csv(out / "family.csv")
    assert [r["model_id"] for r in rows] == ["d1-r0", "d1-r1", "d2-r0", "d2-r1"]
    manifest = json.loads((out / "manifest-train-family.json").read_text())
    assert manifest["config_hash"] == cfg.config_hash()
    assert set(manifest["seeds"]) == {r["model_id"] for r in rows}


def test_family_columns_frozen(tiny_run):
    _, out = tiny_run
    header = (out / "family.csv").read_text().splitlines()[0].split(",")
    assert tuple(header) == FAMILY_COLUMNS
    assert header[20:45] == list(MEASURE_NAMES)


def test_rerun_is_byte_identical(tiny_run, tmp_path):
    cfg, out = tiny_run
    run_experiment(cfg, tmp_path)
    assert (tmp_path / "family.csv").read_bytes() == (out / "family.csv").read_bytes()
    files = sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*")
                   if p.is_file() and p.name != "timings.json")
    assert any(p.name == "measures.json" for p in files)
    for rel in files:
        assert (tmp_path / rel).read_bytes() == (out / rel).read_bytes(), rel


def test_measure_command_reproduces_family(tiny_run, tmp_path):
    cfg, out = tiny_run
    before = (out / "family.csv").read_bytes()
    measure_experiment(cfg, out)
    assert (out / "family.csv").read_bytes() == before
    with pytest.raises(HarnessError):
        measure_experiment(cfg, tmp_path)


def test_family_csv_round_trip(tiny_run):
    _, out = tiny_run
    text = (out / "family.csv").read_text()
    assert family_csv_text(read_family_csv(out / "family.csv")) == text


def test_family_csv_bad_header(tmp_path):
    p = tmp_path / "family.csv"
    p.write_text("depth,gap\n1,0.1\n")
    with pytest.raises(HarnessError):
        read_family_csv(p)


def test_dataset_mismatch_is_reported(tiny_run, tmp_path):
    _, out = tiny_run
    other = resolve({**TINY, "data": {"spec": {"n_samples": 160}, "seed": 5, "shifts": ["noise2x"]}})
    with pytest.raises(HarnessError, match="different dataset"):
        load_data(other, out)


def test_failed_runs_are_counted_not_dropped():
    rows = [dict.fromkeys(FAMILY_COLUMNS) for _ in range(3)]
    for i, r in enumerate(rows):
        r.update(model_id=f"d1-r{i}", depth=1, status="ok", train_error=0.0, test_error=0.1 * i, n_test=100)
    rows[1].update(status="failed", failure="diverged: non-finite loss", train_error=None, test_error=None)
    fam, failed = family_results(rows, "gap")
    assert [r.model_id for r in fam.records] == ["d1-r0", "d1-r2"]
    assert [r["model_id"] for r in failed] == ["d1-r1"]
    assert fam.records[1].gap == pytest.approx(0.2)


# ---- cross-distribution evaluation ----------------------------------------------------------------

def test_cross_eval(tiny_run):
    cfg, out = tiny_run
    summary, per_model = cross_eval(cfg, out)
    rows = list(csv.DictReader(summary.open()))
    variants = ["iid", "iid-twin", "noise2x"]
    assert len(rows) == len(cfg.depths) * len(variants)
    stored = {r["model_id"]: r["test_error"] for r in read_family_csv(out / "family.csv")}
    for r in csv.DictReader(per_model.open()):
        if r["variant"] == "iid":
            assert float(r["error"]) == stored[r["model_id"]]
    # the twin is a fresh draw of the same distribution: per depth the accuracy
    # difference stays within three binomial standard errors
    models = list(csv.DictReader(per_model.open()))
    for depth in cfg.depths:
        acc = {v: np.array([float(r["accuracy"]) for r in models if int(r["depth"]) == depth
                            and r["variant"] == v]) for v in ("iid", "iid-twin")}
        n = sum(int(r["n"]) for r in models if int(r["depth"]) == depth and r["variant"] == "iid")
        p = acc["iid"].mean()
        se = math.sqrt(2 * max(p * (1 - p), 1e-3) / n)
        assert abs(acc["iid"].mean() - acc["iid-twin"].mean()) < 3 * se


# ---- reports ----------------------------------------------------------------------------------

def _planted_rows(groups=(1, 2, 3), per_group=6, seed=0):
    """Family whose every measure equals the generalization gap."""
    rng = np.random.default_rng(seed)
    rows = []
    for g in groups:
        for k in range(per_group):
            gap = 0.05 * g + 0.04 * k + rng.uniform(0, 0.005)
            r = dict.fromkeys(FAMILY_COLUMNS)
            r.update(experiment_id="planted", model_id=f"d{g}-r{k}", depth=g, run=k, status="ok",
                     train_error=0.0, test_error=gap, gap=gap, test_risk=gap, n_train=10_000, n_test=10_000)
            r.update({m: gap for m in MEASURE_NAMES})
            rows.append(r)
    return rows


def test_planted_family_all_high(tmp_path):
    p = tmp_path / "family.csv"
    p.write_text(family_csv_text(_planted_rows()))
    reports = correlate(p, tmp_path / "report", ["gap", "test-risk"])
    for g, rep in reports.items():
        assert len(rep.rows) == 25
        assert [r.measure for r in rep.rows] == list(MEASURE_NAMES)
        assert all(r.band == "high" for r in rep.rows)
        assert all(r.tau == 1.0 and r.Psi == 1.0 and r.robust.mean == 0.0 for r in rep.rows)
    for name in ("correlation-gap.csv", "correlation-test-risk.txt", "robust_cdf-gap.csv",
                 "robust_bars-test-risk.svg", "error_vs_depth.csv", "report_meta.json"):
        assert (tmp_path / "report" / name).exists()


def test_report_parse_emit_fixpoint(tiny_run):
    _, out = tiny_run
    fam, _ = family_results(_planted_rows(per_group=4, seed=3), "gap")
    for rep in (correlation_table(fam, MEASURE_NAMES, "gap", RobustConfig()),
                correlation_table(family_results(read_family_csv(out / "family.csv"), "gap")[0],
                                  MEASURE_NAMES, "gap", RobustConfig(min_weighted_pairs=1))):
        t, c = table_csv(rep), cdf_csv(rep)
        back = parse_report(t, c, rep.experiment_id, rep.config)
        assert back == rep
        assert table_csv(back) == t and cdf_csv(back) == c


def test_text_table_and_chart_are_well_formed():
    fam, _ = family_results(_planted_rows(), "gap")
    rep = correlation_table(fam, MEASURE_NAMES, "gap", RobustConfig())
    text = table_text(rep)
    assert sum(1 for line in text.splitlines() if line.split(" ")[0] in MEASURE_NAMES) == 25
    root = ET.fromstring(bar_chart_svg(rep))
    assert root.tag.endswith("svg")
    assert len(root.findall("{http://www.w3.org/2000/svg}rect")) == 3 + 3 * 25


def test_error_vs_depth_csv(tiny_run, tmp_path):
    _, out = tiny_run
    correlate(out / "family.csv", tmp_path, ["gap"], RobustConfig())
    rows = list(csv.DictReader(io.StringIO((tmp_path / "error_vs_depth.csv").read_text())))
    assert [int(r["depth"]) for r in rows] == [1, 2]
    assert all(int(r["n_models"]) == 2 for r in rows)


# ---- command line -------------------------------------------------------------------------------

def test_cli_usage_errors(capsys, tmp_path):
    assert cli(["frobnicate"]) == 1
    assert "usage:" in capsys.readouterr().err
    assert cli([]) == 1
    assert cli(["train-family", "--jobs", "0"]) == 1
    assert cli(["train-family", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"runs": 1}))
    assert cli(["train-family", "--config", str(bad)]) == 1


def test_cli_runtime_failure(tmp_path, capsys):
    assert cli(["correlate", "--out", str(tmp_path)]) == 2
    assert "train-family" in capsys.readouterr().err


def test_cli_global_flags_before_or_after_subcommand(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    assert cli(["--config", str(cfg), "--out", str(tmp_path / "a"), "gen-data"]) == 0
    assert cli(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "3"]) == 0
    assert (tmp_path / "a" / "data" / "iid.gmds").read_bytes() == (tmp_path / "b" / "data" / "iid.gmds").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest-gen-data.json").read_text())["config"]["base_seed"] == 3


def test_cli_smoke_pipeline(tiny_run, tmp_path):
    _, ref = tiny_run
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    out = tmp_path / "run"
    common = ["--config", str(cfg), "--out", str(out)]
    assert cli(["gen-data", *common]) == 0
    assert cli(["train-family", *common]) == 0
    assert cli(["correlate", *common]) == 0
    assert cli(["report", *common]) == 0
    assert cli(["cross-eval", *common]) == 0
    assert (out / "family.csv").read_bytes() == (ref / "family.csv").read_bytes()
    for command in ("gen-data", "train-family", "correlate", "report", "cross-eval"):
        assert (out / f"manifest-{command}.json").exists()
    assert (out / "report" / "correlation-gap.csv").exists()
    assert (out / "cross_eval.csv").exists()


def test_cli_jobs_do_not_change_output(tiny_run, tmp_path):
    _, ref = tiny_run
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    assert cli(["train-family", "--config", str(cfg), "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    assert (tmp_path / "p" / "family.csv").read_bytes() == (ref / "family.csv").read_bytes()


def test_unwritable_output_is_a_runtime_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    assert cli(["gen-data", "--config", str(cfg), "--out", str(blocker / "sub")]) == 2

