import pytest

from finsler_morse.engine import MorseEngine
from finsler_morse.errors import StageError
from finsler_morse.report import Report
from finsler_morse.scenarios import ScenarioManager

slow = pytest.mark.slow


def test_overrides_skip_none():
    engine = MorseEngine(verbose=False, mesh=128, rank_tol=None)
    assert engine.overrides == {"mesh": 128}
    assert engine.prepare(ScenarioManager.builtin("euclid-point")).numerics.mesh == 128


def test_checks_are_collected(engine):
    names = engine.describe()["checks"]
    assert len(names) == len(engine.checks) > 0
    assert len(set(names)) == len(names)


def test_stage_wraps_geometry_errors(engine):
    report = Report(scenario={"name": "demo"})

    def broken():
        raise ValueError("bad input")

    with pytest.raises(StageError) as info:
        engine.stage(report, "geodesic", broken)
    assert info.value.stage == "geodesic"
    assert isinstance(info.value.cause, ValueError)
    assert "geodesic" in report.timings


def test_stage_failure_becomes_report():
    scenario = ScenarioManager.from_table(
        {
            "name": "upwind",
            "metric": {"family": "kropina", "dim": 2, "omega": [-1, 0]},
            "geodesic": {"tau": 1, "start": [0, 0], "velocity": [-1, 0]},
            "P": {"family": "point", "center": [0, 0]},
        }
    )
    report = MorseEngine(verbose=False).run_scenario(scenario)
    assert not report.passed
    assert report.failure["stage"] == "geodesic"


@slow
@pytest.mark.parametrize(
    "name",
    [
        "euclid-circle-inward-1.5",
        "euclid-point-to-circle-far",
        "sphere-point-4",
        "kropina-wind",
    ],
)
def test_builtin_scenarios_pass(engine, name):
    report = engine.run_scenario(ScenarioManager.builtin(name))
    assert report.failure is None
    assert report.failed_assertions() == []


@slow
def test_sphere_indices_agree(engine):
    report = engine.run_scenario(ScenarioManager.builtin("sphere-point-7"))
    assert report.passed
    assert report.indices["focal_sum"] == 2
    assert report.indices["spectral_Pq"] == 2
    assert report.indices["broken"] == 2
    assert report.indices["normal_Pq"] == 2
    assert [p["multiplicity"] for p in report.focal] == [1, 1]


@slow
def test_focal_nullity_checked_at_every_focal_point(engine):
    report = engine.run_scenario(ScenarioManager.builtin("sphere-point-7"))
    checks = [a for a in report.assertions if a.name.startswith("focal_nullity_identity")]
    assert [a.name for a in checks] == ["focal_nullity_identity_0", "focal_nullity_identity_1"]
    assert all(a.passed and a.actual == 1 for a in checks)


@slow
def test_point_to_circle_splitting(engine):
    report = engine.run_scenario(ScenarioManager.builtin("euclid-point-to-circle-far"))
    assert report.indices["spectral_Pq"] == 0
    assert report.indices["A"] == 1
    assert report.indices["spectral_PQ"] == 1
    assert report.details["A"][0][0] == pytest.approx(-0.75, abs=1e-7)


@slow
def test_trace_tables(engine):
    scenario = ScenarioManager.builtin("euclid-circle-inward-1.5").with_numerics(scan_grid=256)
    report, traces = engine.trace(scenario)
    assert report.passed
    assert set(traces) == {"geodesic", "focal_scan"}
    assert len(traces["geodesic"]) > 0
    assert len(traces["focal_scan"]) > 0
