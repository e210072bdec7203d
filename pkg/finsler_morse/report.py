"""Structured reports, suite aggregates and their on-disk form."""

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import psutil

logger = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 12
CSV_FLOAT_FORMAT = "%.12e"


@dataclass(frozen=True)
class Assertion:
    """One checked relation; always carries both compared values"""

    name: str
    expected: Any
    actual: Any
    passed: bool
    tolerance: Optional[float] = None

    @classmethod
    def equal(cls, name: str, expected: Any, actual: Any) -> "Assertion":
        return cls(name, expected, actual, expected == actual)

    @classmethod
    def close(cls, name: str, expected: float, actual: float, tolerance: float) -> "Assertion":
        return cls(name, expected, actual, bool(abs(actual - expected) <= tolerance), tolerance)

    @classmethod
    def below(cls, name: str, actual: float, tolerance: float) -> "Assertion":
        """actual ≤ tolerance; the bound is reported as the expected value"""
        return cls(name, tolerance, actual, bool(actual <= tolerance), tolerance)


@dataclass
class Report:
    scenario: Dict[str, Any]
    focal: List[Dict[str, Any]] = field(default_factory=list)
    indices: Dict[str, int] = field(default_factory=dict)
    nullities: Dict[str, int] = field(default_factory=dict)
    residuals: Dict[str, float] = field(default_factory=dict)
    assertions: List[Assertion] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)
    failure: Optional[Dict[str, str]] = None
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return str(self.scenario.get("name", "scenario"))

    @property
    def passed(self) -> bool:
        return self.failure is None and all(a.passed for a in self.assertions)

    def add(self, assertion: Assertion):
        self.assertions.append(assertion)
        if not assertion.passed:
            logger.warning(
                "%s: assertion %s failed (expected %s, got %s)",
                self.name, assertion.name, assertion.expected, assertion.actual,
            )

    def failed_assertions(self) -> List[Assertion]:
        return [a for a in self.assertions if not a.passed]


@dataclass
class SuiteReport:
    name: str
    reports: List[Report] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.reports) and all(r.passed for r in self.reports)

    @property
    def pass_count(self) -> int:
        return sum(r.passed for r in self.reports)

    def failures(self) -> List[str]:
        return [r.name for r in self.reports if not r.passed]


def _rounded(value):
    if isinstance(value, dict):
        return {str(k): _rounded(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_rounded(v) for v in value]
    if isinstance(value, np.ndarray):
        return _rounded(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not np.isfinite(value):
            return str(value)
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    return value


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _write_json(path: Path, payload: Dict[str, Any]):
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


class ReportManager:
    """Handles report serialization"""

    @staticmethod
    def payload(report: Report) -> Dict[str, Any]:
        """Deterministic payload: fixed key order, 12 significant digits, no timings"""
        return _rounded(
            {
                "scenario": report.scenario,
                "passed": report.passed,
                "failure": report.failure,
                "focal": report.focal,
                "indices": report.indices,
                "nullities": report.nullities,
                "residuals": report.residuals,
                "assertions": [
                    {
                        "name": a.name,
                        "expected": a.expected,
                        "actual": a.actual,
                        "tolerance": a.tolerance,
                        "passed": a.passed,
                    }
                    for a in report.assertions
                ],
                "details": report.details,
            }
        )

    @staticmethod
    def suite_payload(suite: SuiteReport) -> Dict[str, Any]:
        return {
            "suite": suite.name,
            "passed": suite.passed,
            "pass_count": suite.pass_count,
            "total": len(suite.reports),
            "failures": suite.failures(),
            "reports": [ReportManager.payload(r) for r in suite.reports],
        }

    @staticmethod
    def dumps(report: Report) -> str:
        return json.dumps(ReportManager.payload(report), indent=2, ensure_ascii=False)

    @staticmethod
    def timings_payload(timings: Dict[str, float]) -> Dict[str, Any]:
        memory = psutil.Process().memory_info()
        return {
            "stages": {k: round(v, 6) for k, v in timings.items()},
            "total_seconds": round(sum(timings.values()), 6),
            "rss_mb": round(memory.rss / (1024 * 1024), 2),
        }

    @staticmethod
    def emit(
        report: Report,
        out_dir,
        traces: Optional[Dict[str, pd.DataFrame]] = None,
    ) -> List[Path]:
        """Write ``<name>.json``, ``<name>.timings.json`` and one CSV per trace"""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = _slug(report.name)
        written = [out / f"{stem}.json", out / f"{stem}.timings.json"]
        _write_json(written[0], ReportManager.payload(report))
        _write_json(written[1], ReportManager.timings_payload(report.timings))
        for name, table in (traces or {}).items():
            path = out / f"{stem}.{name}.csv"
            table.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
            written.append(path)
        logger.info("report for %s written to %s", report.name, out)
        return written

    @staticmethod
    def emit_suite(suite: SuiteReport, out_dir) -> List[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"suite-{_slug(suite.name)}"
        written = [out / f"{stem}.json", out / f"{stem}.timings.json"]
        _write_json(written[0], ReportManager.suite_payload(suite))
        timings = dict(suite.timings)
        for report in suite.reports:
            timings[report.name] = sum(report.timings.values())
        _write_json(written[1], ReportManager.timings_payload(timings))
        logger.info("suite %s written to %s", suite.name, out)
        return written
