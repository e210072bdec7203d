import pytest

from finsler_morse.config import RANDOM_SEEDS
from finsler_morse.errors import ConvergenceError, ScenarioError, StageError
from finsler_morse.report import Report
from finsler_morse.suites import MS1_SCENARIOS, MS2_SCENARIOS, SuiteManager, _execute


def test_names():
    assert SuiteManager.names() == [
        "symmetry", "ms1-random", "ms2-random", "propB", "index-lemma", "exp-jacobi", "kropina", "builtin", "mesh",
    ]


def test_unknown_suite(engine):
    with pytest.raises(ScenarioError):
        SuiteManager.run(engine, "nope")


def test_job_lists(engine):
    assert len(SuiteManager.ms1_random(engine, 3)) == RANDOM_SEEDS
    assert SuiteManager.ms2_random(engine, 3)[0][1] == "random-3"
    assert len(SuiteManager.symmetry(engine, 0)) == len(engine.checks)
    assert len(SuiteManager.mesh(engine, 0)) == len(MS1_SCENARIOS + MS2_SCENARIOS)


def test_execute_orders_and_converts_failures():
    def ok():
        return Report(scenario={"name": "ok"})

    def staged():
        raise StageError("focal", ConvergenceError("no bracket"))

    def setup():
        raise ValueError("bad seed")

    reports = _execute([((2,), "ok", ok), ((0,), "staged", staged), ((1,), "setup", setup)])
    assert [r.name for r in reports] == ["staged", "setup", "ok"]
    assert reports[0].failure == {"stage": "focal", "type": "ConvergenceError", "message": "no bracket"}
    assert reports[1].failure["stage"] == "setup"
    assert reports[2].passed


@pytest.mark.slow
@pytest.mark.parametrize("name", ["index-lemma", "exp-jacobi", "kropina"])
def test_suite_passes(engine, name):
    suite = SuiteManager.run(engine, name, seed=0)
    assert suite.failures() == []
    assert suite.passed


def test_draw_count_override(engine):
    assert len(SuiteManager.ms2_random(engine, 5, count=2)) == 2
    named = len(MS1_SCENARIOS + MS2_SCENARIOS)
    assert [job[1] for job in SuiteManager.propB(engine, 7, count=2)[named:]] == ["random-7", "random-8"]


def test_draw_count_rejected_for_fixed_suites(engine):
    with pytest.raises(ScenarioError):
        SuiteManager.run(engine, "mesh", count=2)


@pytest.mark.slow
@pytest.mark.parametrize("name, count", [("mesh", None), ("propB", 2), ("ms2-random", 2), ("ms1-random", 2)])
def test_sweep_suite_passes(engine, name, count):
    suite = SuiteManager.run(engine, name, seed=0, count=count)
    assert suite.failures() == []
    assert suite.passed
    if count is not None:
        assert sum(r.name.startswith("random-") for r in suite.reports) == count


@pytest.mark.slow
def test_symmetry_suite_passes(engine):
    suite = SuiteManager.run(engine, "symmetry", seed=0)
    assert len(suite.reports) == len(engine.checks)
    assert suite.passed
