import json

import numpy as np
from uqaudit.audit import CoverageReport, TABLE_TARGETS
from uqaudit.report import (
    REPORT_CSV_HEADER,
    TABLE_HEADER,
    canonical_json,
    format_table,
    merged_table,
    read_report,
    table_row,
    write_bundle,
)


def _report(alphas, misses, n=200, observation=None, label="m"):
    return CoverageReport(
        tuple(alphas), np.asarray(misses), n, 0, 0.95, (30.1, 2.0), (20.0, 1.0), 12.0,
        config={"alphas": list(alphas)}, provenance={"label": label, "observation": observation or {"sigma": 0.1}},
    )


def test_bundle_files_are_consistent(tmp_path):
    alphas = [0.5, 0.1, 0.01]
    d = write_bundle(_report(alphas, [90, 30, 3]), tmp_path)
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == REPORT_CSV_HEADER and len(lines) == 4
    for line, row in zip(lines[1:], d["rows"]):
        vals = [float(v) for v in line.split(",")]
        assert vals == [row[k] for k in REPORT_CSV_HEADER.split(",")]
    curve = (tmp_path / "coverage_curve.csv").read_text().splitlines()[1:]
    targets = [float(c.split(",")[0]) for c in curve]
    assert targets == sorted(targets) and len(set(targets)) == len(targets)
    assert json.loads((tmp_path / "timing.json").read_text())["wall_time_mean_s"] == 12.0
    raw = (tmp_path / "report.json").read_bytes()
    assert b"\r" not in raw and d["schema_version"] == 1
    assert canonical_json(read_report(tmp_path / "report.json")).encode() == raw


def test_wilson_columns_bracket_observed(tmp_path):
    d = write_bundle(_report([0.1], [30]), tmp_path)
    r = d["rows"][0]
    assert r["wilson_low"] <= r["observed_coverage"] <= r["wilson_high"]


def test_table_full_row_format():
    alphas = sorted(1 - t for t in TABLE_TARGETS)
    d = _report(alphas, [0] * len(alphas)).to_dict()
    row = table_row("PnP-ULA", d, minutes=5.1)
    assert len(row) == len(TABLE_HEADER) and all(row)
    assert format_table([row]).splitlines()[1] == "PnP-ULA, 100.0%, 100.0%, 100.0%, 100.0%, 100.0%, 100.0%, 100.0%, 30.1 ± 2.0, 5.1"


def test_golden_row_format():
    cells = ["PnP-ULA", "89.6%", "90.1%", "90.7%", "91.7%", "92.3%", "93.1%", "94.7%", "33.0 ± 2.5", "5.1"]
    assert format_table([cells]).splitlines()[1] == (
        "PnP-ULA, 89.6%, 90.1%, 90.7%, 91.7%, 92.3%, 93.1%, 94.7%, 33.0 ± 2.5, 5.1"
    )


def test_missing_alpha_leaves_blank_cell():
    alphas = sorted(1 - t for t in TABLE_TARGETS if t != 0.999)
    row = table_row("x", _report(alphas, [0] * len(alphas)).to_dict())
    assert row[7] == "" and row[6] != ""


def test_merged_table_warns_on_model_conflict(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    write_bundle(_report([0.1], [10], observation={"sigma": 0.1}, label="A"), a)
    write_bundle(_report([0.1], [10], observation={"sigma": 0.2}, label="B"), b)
    rows, notes = merged_table([a / "report.json", b / "report.json"])
    assert [r[0] for r in rows] == ["A", "B"] and notes and "WARNING" in notes[0]
    rows, notes = merged_table([a / "report.json"])
    assert not notes and rows[0][-1] == "0.2"
