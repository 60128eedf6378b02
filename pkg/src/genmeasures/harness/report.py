"""Correlation tables, robust sign-error CDF data, bar chart and error-vs-depth data."""
from __future__ import annotations

import csv
import io
import json
import time
from pathlib import Path

from ..correlation import (CorrelationReport, CorrelationRow, RobustConfig, RobustResult,
                           correlation_table)
from ..measures import ALIASES, MEASURE_NAMES
from .experiment import _fmt, family_results, mean_sem, read_family_csv

TABLE_COLUMNS = ("measure", "alias", "g_choice", "tau", "Psi", "robust_mean", "robust_max", "robust_p90",
                 "band", "n_used", "n_excluded", "notes")
CDF_COLUMNS = ("measure", "g_choice", "kind", "group_a", "group_b", "value", "cdf")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _num(v: str):
    return None if v == "" else float(v)


# ---- correlation table -----------------------------------------------------------------

def table_csv(rep: CorrelationReport) -> str:
    rows = [(r.measure, ALIASES.get(r.measure, ""), rep.g_choice, r.tau, r.Psi, r.robust.mean, r.robust.max,
             r.robust.p90, r.band, r.n_used, r.n_excluded, r.notes) for r in rep.rows]
    return _csv(TABLE_COLUMNS, rows)


def cdf_csv(rep: CorrelationReport) -> str:
    """Per measure: every surviving group pair's sign error with its empirical CDF level,
    then each discarded group pair with its count of weighted pairs."""
    rows = []
    for r in rep.rows:
        ordered = sorted(r.robust.phi.items(), key=lambda kv: (kv[1], kv[0]))
        for i, ((a, b), v) in enumerate(ordered):
            rows.append((r.measure, rep.g_choice, "phi", a, b, v, (i + 1) / len(ordered)))
        for (a, b), n in sorted(r.robust.discarded_pairs.items()):
            rows.append((r.measure, rep.g_choice, "discarded", a, b, n, None))
    return _csv(CDF_COLUMNS, rows)


def table_text(rep: CorrelationReport) -> str:
    """Aligned plain-text table; ``-`` marks an undefined statistic."""
    def f(v):
        return "-" if v is None else f"{v:+.3f}"

    head = ("measure", "tau", "Psi", "phi.mean", "phi.max", "phi.p90", "band", "used", "excl")
    body = [(r.measure + (f" ({ALIASES[r.measure]})" if r.measure in ALIASES else ""), f(r.tau), f(r.Psi),
             f(r.robust.mean), f(r.robust.max), f(r.robust.p90), r.band, str(r.n_used), str(r.n_excluded))
            for r in rep.rows]
    widths = [max(len(x[i]) for x in [head, *body]) for i in range(len(head))]
    lines = [f"experiment {rep.experiment_id}  generalization target: {rep.g_choice}  "
             f"robust t={rep.config.t} min_pairs={rep.config.min_weighted_pairs}"]
    fmt = lambda row: "  ".join(c.ljust(w) if i in (0, 6) else c.rjust(w)  # noqa: E731
                                for i, (c, w) in enumerate(zip(row, widths)))
    lines.append(fmt(head))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(fmt(row) for row in body)
    notes = [f"  {r.measure}: {r.notes}" for r in rep.rows if r.notes]
    if notes:
        lines.append("notes:")
        lines.extend(notes)
    return "\n".join(lines) + "\n"


def parse_report(table_text_csv: str, cdf_text_csv: str, experiment_id: str = "",
                 cfg: RobustConfig = RobustConfig()) -> CorrelationReport:
    """Rebuild a report from its table and CDF files."""
    t_rows = list(csv.DictReader(io.StringIO(table_text_csv)))
    c_rows = list(csv.DictReader(io.StringIO(cdf_text_csv)))
    rows, g_choice = [], ""
    for t in t_rows:
        m = t["measure"]
        g_choice = t["g_choice"]
        phi, discarded = {}, {}
        for c in c_rows:
            if c["measure"] != m:
                continue
            key = (int(c["group_a"]), int(c["group_b"]))
            if c["kind"] == "phi":
                phi[key] = float(c["value"])
            else:
                discarded[key] = int(float(c["value"]))
        phi = dict(sorted(phi.items()))
        vals = sorted(phi.values())
        cdf = [(v, (i + 1) / len(vals)) for i, v in enumerate(vals)]
        rob = RobustResult(phi, _num(t["robust_mean"]), _num(t["robust_max"]), _num(t["robust_p90"]),
                           discarded, cdf)
        rows.append(CorrelationRow(m, _num(t["tau"]), _num(t["Psi"]), rob, t["band"], int(t["n_used"]),
                                   int(t["n_excluded"]), t["notes"]))
    return CorrelationReport(rows, g_choice, experiment_id, cfg)


# ---- bar chart ---------------------------------------------------------------------------

def bar_chart_svg(rep: CorrelationReport) -> str:
    """Grouped horizontal bars of mean, 90th percentile and maximum sign error per measure."""
    series = (("mean", "#4c72b0"), ("p90", "#dd8452"), ("max", "#c44e52"))
    row_h, bar_h, left, width = 22, 6, 230, 360
    height = 60 + row_h * len(rep.rows)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{left + width + 40}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="10" y="18" font-size="13">Robust sign error ({rep.g_choice})</text>']
    for i, (name, color) in enumerate(series):
        out.append(f'<rect x="{left + 110 * i}" y="28" width="10" height="10" fill="{color}"/>'
                   f'<text x="{left + 14 + 110 * i}" y="37">{name}</text>')
    for k in range(6):
        x = left + width * k / 5
        out.append(f'<line x1="{x:.1f}" y1="44" x2="{x:.1f}" y2="{height - 12}" stroke="#ddd"/>'
                   f'<text x="{x:.1f}" y="{height - 2}" text-anchor="middle">{k / 5:.1f}</text>')
    for j, r in enumerate(rep.rows):
        y = 48 + row_h * j
        out.append(f'<text x="{left - 6}" y="{y + 12}" text-anchor="end">{r.measure}</text>')
        vals = (r.robust.mean, r.robust.p90, r.robust.max)
        if vals[0] is None:
            out.append(f'<text x="{left + 4}" y="{y + 12}" fill="#888">insufficient precision</text>')
            continue
        for i, ((_, color), v) in enumerate(zip(series, vals)):
            out.append(f'<rect x="{left}" y="{y + 1 + i * bar_h}" width="{width * v:.2f}" height="{bar_h - 1}" '
                       f'fill="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---- error vs depth ---------------------------------------------------------------------

def error_vs_depth_csv(rows: list[dict]) -> str:
    ok = [r for r in rows if (r.get("status") or "ok") == "ok"]
    out = []
    for depth in sorted({int(r["depth"]) for r in ok}):
        sub = [r for r in ok if int(r["depth"]) == depth]
        tr_m, tr_s = mean_sem([r["train_error"] for r in sub])
        te_m, te_s = mean_sem([r["test_error"] for r in sub])
        out.append((depth, len(sub), tr_m, tr_s, te_m, te_s))
    return _csv(("depth", "n_models", "train_error_mean", "train_error_sem", "test_error_mean",
                 "test_error_sem"), out)


# ---- driver -----------------------------------------------------------------------------

def correlate(family_csv: str | Path, out: str | Path, g_choices=("gap",),
              cfg: RobustConfig = RobustConfig(), full: bool = True) -> dict[str, CorrelationReport]:
    """Write correlation tables per generalization target; ``full`` adds CDF, chart and depth data."""
    t0 = time.perf_counter()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = read_family_csv(family_csv)
    reports = {}
    failed = []
    for g in g_choices:
        fam, failed = family_results(rows, g)
        if len(fam.records) < 2:
            raise ValueError(f"{family_csv}: fewer than two usable models")
        rep = correlation_table(fam, MEASURE_NAMES, g, cfg)
        reports[g] = rep
        (out / f"correlation-{g}.csv").write_text(table_csv(rep))
        (out / f"correlation-{g}.txt").write_text(table_text(rep))
        if full:
            (out / f"robust_cdf-{g}.csv").write_text(cdf_csv(rep))
            (out / f"robust_bars-{g}.svg").write_text(bar_chart_svg(rep))
    if full:
        (out / "error_vs_depth.csv").write_text(error_vs_depth_csv(rows))
    meta = {
        "family": str(family_csv),
        "g_choices": list(g_choices),
        "robust": {"t": cfg.t, "min_weighted_pairs": cfg.min_weighted_pairs,
                   "clamp_negative_precision": cfg.clamp_negative_precision},
        "n_models": len(rows),
        "failed_models": [{"model_id": r["model_id"], "failure": r.get("failure")} for r in failed],
        "wall_time_s": time.perf_counter() - t0,
    }
    (out / "report_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return reports


def summary_counts(rows: list[dict]) -> dict:
    depths = sorted({int(r["depth"]) for r in rows})
    return {d: {"ok": sum(1 for r in rows if int(r["depth"]) == d and r.get("status") == "ok"),
                "failed": sum(1 for r in rows if int(r["depth"]) == d and r.get("status") != "ok")}
            for d in depths}


def mean_accuracy_by_depth(rows: list[dict]) -> dict[int, tuple[float, float, int]]:
    """depth -> (mean test accuracy, standard error, model count) over successful runs."""
    out = {}
    for d in sorted({int(r["depth"]) for r in rows}):
        acc = [1.0 - r["test_error"] for r in rows if int(r["depth"]) == d and r.get("status") == "ok"]
        m, s = mean_sem(acc)
        out[d] = (m, s, len(acc))
    return out


__all__ = ["bar_chart_svg", "cdf_csv", "correlate", "error_vs_depth_csv", "mean_accuracy_by_depth",
           "parse_report", "summary_counts", "table_csv", "table_text"]
