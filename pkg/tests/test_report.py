import json

import numpy as np
import pandas as pd
import pytest

from finsler_morse.report import Assertion, Report, ReportManager, SuiteReport


def _report(name="demo", **changes):
    report = Report(scenario={"name": name, "seed": None})
    report.indices = {"focal_sum": 1, "spectral_Pq": 1}
    report.nullities = {"focal_sum": 0, "spectral_Pq": 0}
    report.residuals = {"endpoint": np.float64(1.0 / 3.0)}
    report.add(Assertion.equal("index_equality", 1, 1))
    for key, value in changes.items():
        setattr(report, key, value)
    return report


def test_assertion_constructors():
    assert Assertion.equal("a", 1, 1).passed
    assert not Assertion.equal("a", 1, 2).passed
    close = Assertion.close("b", 1.0, 1.0 + 1e-9, 1e-8)
    assert close.passed and close.tolerance == 1e-8
    below = Assertion.below("c", 2e-8, 1e-8)
    assert not below.passed
    assert below.expected == 1e-8 and below.actual == 2e-8


def test_failed_assertion_fails_report():
    report = _report()
    assert report.passed
    report.add(Assertion.below("residual", 1.0, 1e-6))
    assert not report.passed
    assert [a.name for a in report.failed_assertions()] == ["residual"]


def test_stage_failure_fails_report():
    report = _report(failure={"stage": "focal", "type": "PartitionError", "message": "singular"})
    assert not report.passed


def test_payload_is_rounded_and_ordered():
    report = _report(details={"matrix": np.eye(2), "flag": np.bool_(True), "gap": float("inf")})
    report.timings = {"geodesic": 0.25}
    payload = ReportManager.payload(report)
    assert list(payload) == [
        "scenario", "passed", "failure", "focal", "indices",
        "nullities", "residuals", "assertions", "details",
    ]
    assert payload["residuals"]["endpoint"] == 0.333333333333
    assert payload["details"] == {"matrix": [[1.0, 0.0], [0.0, 1.0]], "flag": True, "gap": "inf"}
    assert "timings" not in payload
    assert json.loads(ReportManager.dumps(report)) == payload


def test_payload_is_deterministic():
    assert ReportManager.dumps(_report()) == ReportManager.dumps(_report())


def test_emit_writes_json_and_csv(tmp_path):
    report = _report(name="sphere point/4")
    report.timings = {"geodesic": 0.5, "focal": 0.25}
    traces = {"geodesic": pd.DataFrame({"t": [0.0, 1.0], "L": [1.0, 1.0]})}
    written = ReportManager.emit(report, tmp_path / "out", traces)

    names = sorted(p.name for p in written)
    assert names == ["sphere_point_4.geodesic.csv", "sphere_point_4.json", "sphere_point_4.timings.json"]
    assert json.loads((tmp_path / "out" / "sphere_point_4.json").read_text())["passed"] is True
    timings = json.loads((tmp_path / "out" / "sphere_point_4.timings.json").read_text())
    assert timings["total_seconds"] == pytest.approx(0.75)
    assert timings["rss_mb"] > 0
    table = pd.read_csv(tmp_path / "out" / "sphere_point_4.geodesic.csv")
    assert list(table.columns) == ["t", "L"]


def test_suite_payload(tmp_path):
    bad = _report(name="bad")
    bad.add(Assertion.equal("index_equality", 1, 0))
    suite = SuiteReport(name="ms1-random", reports=[_report(name="good"), bad])
    assert not suite.passed
    assert suite.pass_count == 1

    payload = ReportManager.suite_payload(suite)
    assert payload["total"] == 2
    assert payload["failures"] == ["bad"]

    written = ReportManager.emit_suite(suite, tmp_path)
    assert [p.name for p in written] == ["suite-ms1-random.json", "suite-ms1-random.timings.json"]


def test_empty_suite_does_not_pass():
    assert not SuiteReport(name="empty").passed
