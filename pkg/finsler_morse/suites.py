"""Verification suites: randomized sweeps and deterministic scenario families."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from finsler_morse.config import (
    IDENTITY_DRAWS,
    LEMMA_TRIALS,
    PROPB_SEEDS,
    RANDOM_SEEDS,
    SUITE_WORKERS,
)
from finsler_morse.errors import FinslerMorseError, ScenarioError, StageError
from finsler_morse.geometry.checks import IdentityCheck, sample_tangent
from finsler_morse.geometry.curves import CurveManager
from finsler_morse.geometry.indexform import JACOBI_EQUALITY_TOL, IndexFormManager
from finsler_morse.geometry.jacobi import JacobiManager
from finsler_morse.geometry.metric import MetricSpec
from finsler_morse.geometry.submanifold import Submanifold, SubmanifoldManager
from finsler_morse.report import Assertion, Report, SuiteReport
from finsler_morse.scenarios import GeodesicSpec, Scenario, ScenarioManager

logger = logging.getLogger(__name__)

MS1_SCENARIOS = (
    "sphere-point-2.5",
    "sphere-point-4",
    "sphere-point-7",
    "euclid-circle-inward-0.5",
    "euclid-circle-inward-1.5",
    "euclid-sphere-inward-1.5",
)
MS2_SCENARIOS = (
    "euclid-point-to-circle-far",
    "euclid-point-to-circle-near",
    "euclid-point-to-circle-center",
)
LEMMA_SCENARIOS = ("euclid-circle-inward-0.5", "sphere-point-2.5", "kropina-wind")
FOCAL_EXP_SCENARIOS = ("euclid-circle-inward-1.5", "sphere-point-4")
EXP_DRAWS = 20
EXP_STEP = 1e-4
EXP_TOL = 1e-5
FOCAL_TIME_TOL = 1e-6
KROPINA_VARIANTS = 4
MESH_PAIR = (256, 512)

Job = Tuple[Tuple, str, Callable[[], Report]]


def _failed(name: str, stage: str, error: BaseException) -> Report:
    report = Report(scenario={"name": name})
    report.failure = {"stage": stage, "type": type(error).__name__, "message": str(error)}
    return report


def _execute(jobs: List[Job]) -> List[Report]:
    """Run jobs over the worker pool; results come back in key order"""
    results: Dict[Tuple, Report] = {}
    with ThreadPoolExecutor(max_workers=SUITE_WORKERS) as executor:
        futures = {executor.submit(job): (key, name) for key, name, job in jobs}
        for future in as_completed(futures):
            key, name = futures[future]
            try:
                results[key] = future.result()
            except StageError as e:
                results[key] = _failed(name, e.stage, e.cause)
            except (FinslerMorseError, np.linalg.LinAlgError, ValueError) as e:
                results[key] = _failed(name, "setup", e)
            status = "passed" if results[key].passed else "FAILED"
            logger.info("%s %s", name, status)
    return [results[key] for key in sorted(results)]


def _identity_job(check: IdentityCheck, index: int, seed: int) -> Callable[[], Report]:
    def job() -> Report:
        report = Report(scenario={"name": f"identity:{check.name}", "seed": seed})
        draws = min(check.draws or IDENTITY_DRAWS, IDENTITY_DRAWS)
        worst = 0.0
        failures = 0
        errors: List[str] = []
        started = time.perf_counter()
        for draw in range(draws):
            rng = np.random.default_rng([seed, index, draw])
            metric = ScenarioManager.random_metric(rng, dim=2 + draw % 2)
            try:
                residual = check(metric, rng)
            except (FinslerMorseError, np.linalg.LinAlgError, ValueError) as e:
                failures += 1
                errors.append(f"draw {draw}: {type(e).__name__}: {e}")
                continue
            worst = max(worst, residual)
            failures += residual > check.tolerance
        report.timings[check.name] = time.perf_counter() - started
        report.residuals[check.name] = worst
        report.details["draws"] = draws
        if errors:
            report.details["errors"] = errors[:5]
        report.add(Assertion.below(f"{check.name}_max_residual", worst, check.tolerance))
        report.add(Assertion.equal(f"{check.name}_failures", 0, failures))
        return report

    return job


def _index_lemma_job(engine, scenario: Scenario, seed: int) -> Callable[[], Report]:
    def job() -> Report:
        prepared = engine.prepare(scenario)
        report = Report(scenario=prepared.describe())
        system = engine.reduce_scenario(prepared, report)
        rng = np.random.default_rng(seed)
        lemma = engine.stage(
            report, "index_lemma", IndexFormManager.index_lemma_check, system, LEMMA_TRIALS, rng
        )
        report.details["worst_gap"] = lemma.worst_gap
        report.add(Assertion.equal("index_lemma_inequality", lemma.trials, lemma.passed))
        report.add(Assertion.equal("index_lemma_equality_cases", 0, lemma.equality_violations))
        report.add(Assertion.below("index_lemma_jacobi_gap", lemma.jacobi_gap, JACOBI_EQUALITY_TOL))
        report.add(Assertion.below("index_lemma_jacobi_distance", lemma.jacobi_distance, 1e-6))
        return report

    return job


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def _exp_job(draw: int, seed: int) -> Callable[[], Report]:
    """D exp and D exp^{LN} against central differences on one random draw"""

    def job() -> Report:
        rng = np.random.default_rng([seed, 7, draw])
        dim = 2 + draw % 2
        metric = ScenarioManager.random_metric(rng, dim)
        report = Report(scenario={"name": f"exp-jacobi-{draw}", "seed": seed})

        v = sample_tangent(metric, rng, box=0.5)
        y = 0.8 * v.y
        w = rng.normal(size=dim)
        analytic = CurveManager.exp_differential(metric, v.x, y, w)
        numeric = (
            CurveManager.exp_map(metric, v.x, y + EXP_STEP * w) - CurveManager.exp_map(metric, v.x, y - EXP_STEP * w)
        ) / (2.0 * EXP_STEP)
        report.residuals["exp_differential"] = _relative(analytic, numeric)
        report.add(Assertion.below("exp_differential", report.residuals["exp_differential"], EXP_TOL))

        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        radius = float(rng.uniform(0.5, 1.5))
        P = Submanifold.circle((v.x + radius * direction).tolist(), radius) if dim == 2 else Submanifold.line(
            v.x.tolist(), rng.normal(size=dim).tolist()
        )
        u = SubmanifoldManager.locate(P, v.x)
        a = rng.normal(size=P.k)
        hint = rng.normal(size=dim)

        def normal(s):
            return SubmanifoldManager.normal_vector(metric, P, u + s * a, hint, speed=0.8)

        base = normal(0.0)
        plus, minus = normal(EXP_STEP), normal(-EXP_STEP)
        tangent = (plus.x - minus.x) / (2.0 * EXP_STEP)
        variation = (plus.y - minus.y) / (2.0 * EXP_STEP)
        analytic = SubmanifoldManager.normal_exp_differential(metric, P, base, tangent, variation)
        numeric = (
            SubmanifoldManager.normal_exp(metric, P, plus) - SubmanifoldManager.normal_exp(metric, P, minus)
        ) / (2.0 * EXP_STEP)
        report.residuals["normal_exp_differential"] = _relative(analytic, numeric)
        report.add(Assertion.below("normal_exp_differential", report.residuals["normal_exp_differential"], EXP_TOL))
        return report

    return job


def _focal_exp_job(engine, scenario: Scenario) -> Callable[[], Report]:
    """The normal exponential map drops rank exactly at the detected focal instant"""

    def job() -> Report:
        prepared = engine.prepare(scenario)
        report = Report(scenario=prepared.describe())
        system = engine.reduce_scenario(prepared, report)
        focal = engine.stage(report, "focal", JacobiManager.focal_points, system)
        if not focal:
            report.add(Assertion.equal("focal_detected", True, False))
            return report
        t0 = focal[0].time
        metric, P = prepared.metric, prepared.P
        start = system.geodesic.start

        def determinant(t):
            return float(np.linalg.det(SubmanifoldManager.normal_exp_jacobian(metric, P, start.scaled(t))))

        crossing = engine.stage(report, "normal_exp", brentq, determinant, t0 - 0.05, t0 + 0.05, xtol=1e-10)
        report.details["rank_drop"] = crossing
        report.add(Assertion.close("normal_exp_rank_drop", t0, crossing, FOCAL_TIME_TOL))
        return report

    return job


def _mesh_job(engine, scenario: Scenario) -> Callable[[], Report]:
    def job() -> Report:
        prepared = engine.prepare(scenario)
        report = Report(scenario=prepared.describe())
        system = engine.reduce_scenario(prepared, report)
        forms = {"Pq": lambda N: IndexFormManager.assemble_Pq(system, N)}
        if prepared.Q is not None:
            forms["PQ"] = lambda N: IndexFormManager.assemble_PQ(system, prepared.Q, N)
        for key, assemble in forms.items():
            coarse, fine = (
                engine.stage(report, f"mesh_{N}", IndexFormManager.spectral_index, assemble(N), False)
                for N in MESH_PAIR
            )
            report.indices[f"{key}_{MESH_PAIR[0]}"] = coarse.index
            report.indices[f"{key}_{MESH_PAIR[1]}"] = fine.index
            report.add(Assertion.equal(f"mesh_doubling_{key}", list(coarse.counts()), list(fine.counts())))
        return report

    return job


def _kropina_variant(index: int, seed: int) -> Scenario:
    rng = np.random.default_rng([seed, 11, index])
    angle = rng.uniform(0.0, 2.0 * np.pi)
    wind = np.array([np.cos(angle), np.sin(angle)])
    strength = float(rng.uniform(0.5, 1.5))
    turn = rng.uniform(-0.6, 0.6)
    heading = np.array([np.cos(angle + turn), np.sin(angle + turn)])
    end = float(rng.uniform(0.5, 1.5)) * heading
    return Scenario(
        name=f"kropina-variant-{index}",
        metric=MetricSpec.kropina((-strength * wind).tolist(), dim=2),
        geodesic=GeodesicSpec("bvp", 1.0, (0.0, 0.0), end=tuple(end.tolist()), guess=tuple(end.tolist())),
        P=Submanifold.point([0.0, 0.0]),
        seed=index,
        expect={"index": 0, "nullity": 0, "focal": []},
    )


class SuiteManager:
    """Handles the registered verification suites"""

    @staticmethod
    def names() -> List[str]:
        return list(SUITES)

    @staticmethod
    def run(engine, name: str, seed: int = 0, count: Optional[int] = None) -> SuiteReport:
        """Run one suite; each scenario gets its own report, merged in seed order.

        ``count`` overrides the number of random draws of the seeded suites.
        """
        if name not in SUITES:
            raise ScenarioError(f"unknown suite '{name}', expected one of {list(SUITES)}")
        if count is None:
            jobs = SUITES[name](engine, seed)
        elif name in SEEDED_SUITES:
            jobs = SUITES[name](engine, seed, count=count)
        else:
            raise ScenarioError(f"suite '{name}' takes no draw count, only {sorted(SEEDED_SUITES)} do")
        started = time.perf_counter()
        reports = _execute(jobs)
        suite = SuiteReport(name=name, reports=reports, timings={"total": time.perf_counter() - started})
        logger.info("suite %s: %d/%d passed", name, suite.pass_count, len(reports))
        return suite

    @staticmethod
    def symmetry(engine, seed: int) -> List[Job]:
        return [
            ((i,), f"identity:{check.name}", _identity_job(check, i, seed))
            for i, check in enumerate(engine.checks)
        ]

    @staticmethod
    def ms1_random(engine, seed: int, count: int = RANDOM_SEEDS) -> List[Job]:
        return [
            ((s,), f"random-{s}", lambda s=s: engine.run_scenario(ScenarioManager.random_scenario(s)))
            for s in range(seed, seed + count)
        ]

    @staticmethod
    def ms2_random(engine, seed: int, count: int = RANDOM_SEEDS) -> List[Job]:
        return [
            ((s,), f"random-{s}", lambda s=s: engine.run_scenario(ScenarioManager.random_scenario(s, with_Q=True)))
            for s in range(seed, seed + count)
        ]

    @staticmethod
    def propB(engine, seed: int, count: int = PROPB_SEEDS) -> List[Job]:
        jobs = SuiteManager._named(engine, MS1_SCENARIOS + MS2_SCENARIOS)
        for s in range(seed, seed + count):
            jobs.append(
                (
                    (len(jobs), s),
                    f"random-{s}",
                    lambda s=s: engine.run_scenario(ScenarioManager.random_scenario(s, with_Q=s % 2 == 1)),
                )
            )
        return jobs

    @staticmethod
    def index_lemma(engine, seed: int) -> List[Job]:
        return [
            ((i,), name, _index_lemma_job(engine, ScenarioManager.builtin(name), seed + i))
            for i, name in enumerate(LEMMA_SCENARIOS)
        ]

    @staticmethod
    def exp_jacobi(engine, seed: int) -> List[Job]:
        jobs = [((0, d), f"exp-jacobi-{d}", _exp_job(d, seed)) for d in range(EXP_DRAWS)]
        for i, name in enumerate(FOCAL_EXP_SCENARIOS):
            jobs.append(((1, i), f"{name}:rank-drop", _focal_exp_job(engine, ScenarioManager.builtin(name))))
        return jobs

    @staticmethod
    def kropina(engine, seed: int) -> List[Job]:
        jobs = SuiteManager._named(engine, ("kropina-wind",))
        for i in range(KROPINA_VARIANTS):
            jobs.append(((1 + i,), f"kropina-variant-{i}", lambda i=i: engine.run_scenario(_kropina_variant(i, seed))))
        return jobs

    @staticmethod
    def builtin(engine, seed: int) -> List[Job]:
        return SuiteManager._named(engine, tuple(ScenarioManager.builtin_names()))

    @staticmethod
    def mesh(engine, seed: int) -> List[Job]:
        return [
            ((i,), name, _mesh_job(engine, ScenarioManager.builtin(name)))
            for i, name in enumerate(MS1_SCENARIOS + MS2_SCENARIOS)
        ]

    @staticmethod
    def _named(engine, names) -> List[Job]:
        return [
            ((i,), name, lambda name=name: engine.run_scenario(ScenarioManager.builtin(name)))
            for i, name in enumerate(names)
        ]


SUITES: Dict[str, Callable[..., List[Job]]] = {
    "symmetry": SuiteManager.symmetry,
    "ms1-random": SuiteManager.ms1_random,
    "ms2-random": SuiteManager.ms2_random,
    "propB": SuiteManager.propB,
    "index-lemma": SuiteManager.index_lemma,
    "exp-jacobi": SuiteManager.exp_jacobi,
    "kropina": SuiteManager.kropina,
    "builtin": SuiteManager.builtin,
    "mesh": SuiteManager.mesh,
}
SEEDED_SUITES = frozenset({"ms1-random", "ms2-random", "propB"})
