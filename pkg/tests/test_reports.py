"""
test_reports.py - 指标报告的计算与读写
"""

import csv
import math

import numpy as np
import pytest

from lfbnet.evaluation import MetricRow, MetricsReport, Thresholds, evaluate_label_maps, read_report, write_report
from lfbnet.evaluation.reports import aggregate_rows
from lfbnet.utils.errors import DataError, FormatError


def _square(size, lo, hi, value=1):
    m = np.zeros((size, size), dtype=np.uint8)
    m[lo:hi, lo:hi] = value
    return m


def _report(thresholds=None):
    ref = _square(16, 4, 12)
    ids = ["a", "b", "c"]
    preds = [ref.copy(), _square(16, 5, 12), np.zeros_like(ref)]
    return evaluate_label_maps(ids, preds, [ref] * 3, n_label_classes=2, thresholds=thresholds, num_threads=1)


def test_rows_per_sample_and_class():
    report = _report()
    assert [(r.sample_id, r.class_index) for r in report.rows] == [("a", 1), ("b", 1), ("c", 1)]
    perfect, shrunk, empty = report.rows
    assert perfect.dice == 1.0 and perfect.hd_mm == 0.0 and perfect.rvd == 0.0
    assert perfect.violations == 0
    assert shrunk.rvd == pytest.approx(1 - 49 / 64)
    assert shrunk.signed_vd < 0
    assert empty.dice == 0.0 and empty.hd_mm is None
    assert empty.components == 0 and empty.violations == 1


def test_aggregates_skip_undefined_hausdorff():
    agg = _report().aggregates()[1]
    assert agg["n"] == 3.0
    assert agg["hd_undefined"] == 1.0
    assert agg["dice_min"] == 0.0
    assert agg["violations_total"] == 1.0
    hd_b = _report().rows[1].hd_mm
    assert agg["hd_mean"] == pytest.approx(hd_b / 2)
    assert agg["hd_std"] == pytest.approx(hd_b / 2)


def test_threshold_percentages():
    agg = _report(Thresholds(dice=0.9, hd_mm=0.5)).aggregates()[1]
    assert agg["pct_dice_below"] == pytest.approx(200.0 / 3)
    assert agg["pct_hd_above"] == pytest.approx(100.0 / 3)


def test_thresholds_parse():
    assert Thresholds.parse("dice=0.88,hd=6.5") == Thresholds(dice=0.88, hd_mm=6.5)
    assert Thresholds.parse("hd=3").dice == Thresholds().dice
    with pytest.raises(ValueError):
        Thresholds.parse("rvd=0.1")


def test_write_and_read_back(tmp_path):
    report = _report(Thresholds())
    path, summary = write_report(report, str(tmp_path / "eval_test.csv"))
    again = read_report(path)
    assert len(again.rows) == len(report.rows)
    assert again.rows[2].hd_mm is None
    assert [r.violations for r in again.rows] == [r.violations for r in report.rows]
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    assert header[-2:] == ["dice_below", "hd_above"]
    assert "violations" in header
    with open(summary, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["class"] == "1"
    assert float(rows[0]["dice_mean"]) == pytest.approx(report.aggregates()[1]["dice_mean"], abs=1e-12)


def test_summary_recomputable_from_rows(tmp_path):
    report = _report()
    path, _ = write_report(report, str(tmp_path / "r.csv"))
    before = report.aggregates()
    after = aggregate_rows(read_report(path).rows)
    for key, value in before[1].items():
        assert (math.isnan(value) and math.isnan(after[1][key])) or abs(value - after[1][key]) <= 1e-9


def test_read_rejects_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,class,dice\na,1,0.5\n")
    with pytest.raises(FormatError):
        read_report(str(path))


def test_mismatched_shapes_rejected():
    with pytest.raises(DataError):
        evaluate_label_maps(["a"], [np.zeros((4, 4))], [np.zeros((5, 5))], n_label_classes=2, num_threads=1)


def test_threaded_evaluation_matches_serial():
    rng = np.random.default_rng(5)
    refs = [rng.integers(0, 3, size=(12, 12)).astype(np.uint8) for _ in range(6)]
    preds = [rng.integers(0, 3, size=(12, 12)).astype(np.uint8) for _ in range(6)]
    ids = [f"s{i}" for i in range(6)]
    serial = evaluate_label_maps(ids, preds, refs, 3, num_threads=1)
    threaded = evaluate_label_maps(ids, preds, refs, 3, num_threads=4)
    assert serial.rows == threaded.rows


def test_report_values_and_means():
    rows = [MetricRow("a", 1, 0.5, 2.0, 0.1, 0.1, 0, 1), MetricRow("b", 1, 1.0, None, 0.0, 0.0, 0, 1)]
    report = MetricsReport(rows)
    assert report.values("dice", 1) == {"a": 0.5, "b": 1.0}
    assert report.foreground_mean("hd") == 2.0
    assert report.foreground_mean("dice") == 0.75


def test_numeric_looking_ids_and_undefined_values_survive(tmp_path):
    rows = [MetricRow("007", 1, 0.25, None, None, None, 1, 2, 3), MetricRow("1e3", 1, 1.0, 0.0, 0.0, 0.0, 0, 1)]
    path, _ = write_report(MetricsReport(rows), str(tmp_path / "ids.csv"))
    again = read_report(path)
    assert [r.sample_id for r in again.rows] == ["007", "1e3"]
    assert again.rows[0].hd_mm is None and again.rows[0].rvd is None and again.rows[0].signed_vd is None
    assert again.rows == rows
    with open(path, newline="") as fh:
        first = list(csv.DictReader(fh))[0]
    assert first["hd_mm"] == "undefined"
