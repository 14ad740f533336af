"""Report files: report.json, report.csv, coverage_curve.csv, trials.ndjson,
timing.json, and the merged coverage table.

All text is UTF-8 with LF line endings. Floats are written with ``repr`` so
that every file reproduces report.json values exactly.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .audit import TABLE_TARGETS

log = logging.getLogger(__name__)

REPORT_CSV_HEADER = "target_coverage,observed_coverage,ell_hat,wilson_low,wilson_high"
CURVE_CSV_HEADER = "target_coverage,observed_coverage,ell_hat"


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def report_csv(report_dict):
    lines = [REPORT_CSV_HEADER]
    for r in report_dict["rows"]:
        lines.append(",".join(repr(float(r[k])) for k in REPORT_CSV_HEADER.split(",")))
    return "\n".join(lines) + "\n"


def coverage_curve_csv(report_dict):
    rows = sorted(report_dict["rows"], key=lambda r: r["target_coverage"])
    lines = [CURVE_CSV_HEADER]
    for r in rows:
        lines.append(",".join(repr(float(r[k])) for k in CURVE_CSV_HEADER.split(",")))
    return "\n".join(lines) + "\n"


class TrialWriter:
    """Line-delimited JSON trial records, written from a single thread."""

    def __init__(self, path):
        self._f = open(path, "w", encoding="utf-8", newline="\n")

    def __call__(self, record):
        self._f.write(json.dumps(record.to_dict(), sort_keys=True, allow_nan=True) + "\n")

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_bundle(report, out_dir):
    """Write report.json, report.csv, coverage_curve.csv and timing.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    _write(out / "report.json", canonical_json(d))
    _write(out / "report.csv", report_csv(d))
    _write(out / "coverage_curve.csv", coverage_curve_csv(d))
    _write(out / "timing.json", canonical_json({"wall_time_mean_s": report.wall_time_mean}))
    return d


def read_report(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# merged table
# ---------------------------------------------------------------------------

TABLE_HEADER = ["method"] + [f"{100 * t:g}%" for t in TABLE_TARGETS] + ["PSNR (dB)", "time (min)"]


def _fmt_pct(v):
    return f"{100.0 * v:.1f}%"


def table_row(label, report_dict, minutes=None):
    """One row: observed coverage at each table target (blank if absent),
    PSNR mean ± std, time per image in minutes (blank if unknown)."""
    cells = [label]
    rows = report_dict["rows"]
    for t in TABLE_TARGETS:
        hit = [r for r in rows if abs(r["target_coverage"] - t) <= 1e-9]
        cells.append(_fmt_pct(hit[0]["observed_coverage"]) if hit else "")
    mu, sd = report_dict["psnr"]["mean_estimate"]
    cells.append(f"{mu:.1f} ± {sd:.1f}")
    cells.append("" if minutes is None else f"{minutes:.1f}")
    return cells


def _label(path, d):
    prov = d.get("provenance", {})
    return prov.get("label") or prov.get("method") or Path(path).parent.name


def _minutes(path):
    p = Path(path).with_name("timing.json")
    if not p.exists():
        return None
    return read_report(p)["wall_time_mean_s"] / 60.0


def merged_table(paths):
    """Returns ``(rows, warnings)``; each row is a list of cell strings."""
    rows, notes = [], []
    models = set()
    for p in paths:
        d = read_report(p)
        models.add(canonical_json(d.get("provenance", {}).get("observation", None)))
        rows.append(table_row(_label(p, d), d, _minutes(p)))
    if len(models) > 1:
        notes.append("WARNING: reports were produced with different observation models")
    return rows, notes


def format_table(rows, notes=(), sep=", "):
    lines = list(notes) + [sep.join(TABLE_HEADER)] + [sep.join(r) for r in rows]
    return "\n".join(lines) + "\n"


def table_csv(rows):
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    w.writerows(rows)
    return buf.getvalue()
