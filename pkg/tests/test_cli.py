import json

import pytest

from finsler_morse.scenarios import ScenarioManager
from finsler_morse.suites import SuiteManager
from main import build_parser, create_engine, main


def test_list(capsys):
    assert main(["list"]) == 0
    output = capsys.readouterr().out
    for name in ScenarioManager.builtin_names() + SuiteManager.names():
        assert f"- {name}" in output


def test_global_flags_reach_engine():
    args = build_parser().parse_args(["--mesh", "128", "--ode-tol", "1e-9", "run", "euclid-point"])
    engine = create_engine(args)
    assert engine.overrides["mesh"] == 128
    assert engine.overrides["rtol"] == 1e-9
    assert engine.overrides["atol"] == pytest.approx(1e-11)
    assert "rank_tol" not in engine.overrides


def test_unknown_suite_is_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["verify", "no-such-suite"])


def test_run_writes_report(tmp_path, capsys):
    assert main(["--quiet", "--mesh", "64", "--out", str(tmp_path), "run", "euclid-circle-inward-0.5"]) == 0
    payload = json.loads((tmp_path / "euclid-circle-inward-0.5.json").read_text())
    assert payload["passed"] is True
    assert payload["indices"]["spectral_Pq"] == 0
    assert (tmp_path / "euclid-circle-inward-0.5.timings.json").exists()
    assert "passed" in capsys.readouterr().out


def test_missing_config_fails(tmp_path, capsys):
    assert main(["--quiet", "--out", str(tmp_path), "run", str(tmp_path / "missing.toml")]) == 1
    assert "not found" in capsys.readouterr().out


def test_failing_expectation_exits_nonzero(tmp_path):
    path = tmp_path / "wrong.toml"
    path.write_text(
        "\n".join(
            [
                "[metric]",
                'family = "euclidean"',
                "dim = 2",
                "[geodesic]",
                "tau = 2",
                "start = [0, 0]",
                "velocity = [1, 0]",
                "[P]",
                'family = "point"',
                "center = [0, 0]",
                "[numerics]",
                "mesh = 64",
                "[expect]",
                "index = 3",
            ]
        )
    )
    assert main(["--quiet", "--out", str(tmp_path), "run", str(path)]) == 1


@pytest.mark.slow
def test_trace_writes_csv(tmp_path):
    assert main(["--quiet", "--mesh", "64", "--out", str(tmp_path), "trace", "euclid-circle-inward-1.5"]) == 0
    assert (tmp_path / "euclid-circle-inward-1.5.geodesic.csv").exists()
    assert (tmp_path / "euclid-circle-inward-1.5.focal_scan.csv").exists()


def test_draw_count_on_fixed_suite_fails(tmp_path, capsys):
    assert main(["--quiet", "--out", str(tmp_path), "verify", "mesh", "--count", "2"]) == 1
    assert "takes no draw count" in capsys.readouterr().out
