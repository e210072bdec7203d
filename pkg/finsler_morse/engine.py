import logging
import time
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from finsler_morse.config import (
    FRAME_TOL,
    L_DRIFT_TOL,
    ORTHOGONALITY_TOL,
    VERBOSE,
)
from finsler_morse.errors import FinslerMorseError, StageError
from finsler_morse.geometry.checks import IdentityCheck
from finsler_morse.geometry.connection import ConnectionManager
from finsler_morse.geometry.curves import CurveManager, Geodesic
from finsler_morse.geometry.expression import evaluate_number
from finsler_morse.geometry.indexform import IndexFormManager, IndexResult
from finsler_morse.geometry.jacobi import ENDPOINT_SNAP, JacobiManager, ReducedJacobiSystem
from finsler_morse.geometry.metric import MetricManager
from finsler_morse.geometry.submanifold import SubmanifoldManager
from finsler_morse.report import Assertion, Report, SuiteReport
from finsler_morse.scenarios import Scenario, ScenarioManager

logger = logging.getLogger(__name__)

WRONSKIAN_TOL = 1e-8
CURVATURE_SYMMETRY_TOL = 1e-8
FORM_SYMMETRY_TOL = 1e-6
CROSS_ORTHOGONALITY_TOL = 1e-8
KERNEL_MAP_TOL = 1e-6
FOCAL_TIME_TOL = 1e-6
CROSS_TRIALS = 5

STAGE_ERRORS = (FinslerMorseError, np.linalg.LinAlgError, ValueError)


class MorseEngine:
    """
    Runs the Morse index pipeline on scenarios and verification suites.

    The engine owns one instance of every geometry manager and collects their
    randomized identity checks for the symmetry suite. Each pipeline stage is
    timed; any geometry error is reported with the stage it happened in.

    Args:
        verbose (bool, optional): log a progress line per stage at INFO.
        **overrides: numerics overriding every scenario's own settings
            (``mesh``, ``rtol``, ``atol``, ``rank_tol``, ``scan_grid``).
            ``None`` values are ignored.

    Examples:
        ```python
        engine = MorseEngine(mesh=512)
        report = engine.run_scenario(ScenarioManager.builtin("sphere-point-4"))
        print(report.indices)  # {'focal_sum': 1, 'spectral_Pq': 1, 'broken': 1}

        suite = engine.verify_suite("ms1-random", seed=0)
        print(suite.pass_count, len(suite.reports))
        ```
    """

    def __init__(self, verbose: bool = VERBOSE, **overrides):
        self.verbose = verbose
        self.overrides = {k: v for k, v in overrides.items() if v is not None}

        # Initialize all managers
        self.metric_manager = MetricManager()
        self.connection_manager = ConnectionManager()
        self.curve_manager = CurveManager()
        self.submanifold_manager = SubmanifoldManager()
        self.jacobi_manager = JacobiManager()
        self.indexform_manager = IndexFormManager()
        self.scenario_manager = ScenarioManager()

        # Collect identity checks
        self.checks = self.__collect_checks()

    def __collect_checks(self) -> List[IdentityCheck]:
        """Collect the randomized identity checks of every geometry manager."""
        all_checks = []

        all_checks.extend(self.metric_manager.get_checks())
        all_checks.extend(self.connection_manager.get_checks())
        all_checks.extend(self.curve_manager.get_checks())
        all_checks.extend(self.submanifold_manager.get_checks())
        all_checks.extend(self.jacobi_manager.get_checks())

        return all_checks

    def prepare(self, scenario: Scenario) -> Scenario:
        """Apply the engine-wide numerics overrides"""
        return scenario.with_numerics(**self.overrides)

    def stage(self, report: Report, stage: str, func: Callable, *args, **kwargs):
        started = time.perf_counter()
        try:
            return func(*args, **kwargs)
        except STAGE_ERRORS as e:
            raise StageError(stage, e) from e
        finally:
            elapsed = time.perf_counter() - started
            report.timings[stage] = report.timings.get(stage, 0.0) + elapsed
            if self.verbose:
                logger.info("%s: %s finished in %.3fs", report.name, stage, elapsed)

    def build_geodesic(self, scenario: Scenario) -> Geodesic:
        spec = scenario.geodesic
        numerics = scenario.numerics
        start = np.asarray(spec.start, dtype=float)
        if spec.mode == "ivp":
            return self.curve_manager.geodesic_ivp(
                scenario.metric, start, np.asarray(spec.velocity), spec.tau, numerics.rtol, numerics.atol
            )
        return self.curve_manager.geodesic_bvp(
            scenario.metric,
            start,
            np.asarray(spec.end),
            spec.tau,
            np.asarray(spec.guess),
            numerics.rtol,
            numerics.atol,
        )

    def reduce_scenario(self, scenario: Scenario, report: Optional[Report] = None) -> ReducedJacobiSystem:
        """Geodesic, endpoint checks, parallel frame and reduced Jacobi system"""
        scenario = self.prepare(scenario)
        report = report if report is not None else Report(scenario=scenario.describe())
        numerics = scenario.numerics

        geodesic = self.stage(report, "geodesic", self.build_geodesic, scenario)
        drift = self.curve_manager.lagrangian_drift(geodesic)
        report.residuals["lagrangian_drift"] = drift
        report.add(Assertion.below("lagrangian_drift", drift, L_DRIFT_TOL))

        orthogonality = self.stage(
            report, "orthogonality", self.submanifold_manager.orthogonality_check, scenario.P, scenario.Q, geodesic
        )
        for end, residual in orthogonality.items():
            if residual is not None:
                report.residuals[f"orthogonality_{end}"] = residual
                report.add(Assertion.below(f"orthogonality_{end}", residual, ORTHOGONALITY_TOL))

        frame = self.stage(
            report, "frame", self.curve_manager.parallel_frame, geodesic, scenario.P,
            rtol=numerics.rtol, atol=numerics.atol,
        )
        deviation = frame.gram_deviation()
        report.residuals["frame_orthonormality"] = deviation
        report.add(Assertion.below("frame_orthonormality", deviation, FRAME_TOL))

        system = self.stage(
            report, "reduce", self.jacobi_manager.reduce, geodesic, scenario.P, frame,
            rtol=numerics.rtol, atol=numerics.atol,
        )
        report.residuals["curvature_asymmetry"] = system.asymmetry
        report.add(Assertion.below("curvature_asymmetry", system.asymmetry, CURVATURE_SYMMETRY_TOL))
        return system

    def run_scenario(self, scenario: Scenario) -> Report:
        """Run the full pipeline and compare the three index routes"""
        scenario = self.prepare(scenario)
        report = Report(scenario=scenario.describe())
        try:
            self.__pipeline(scenario, report)
        except StageError as e:
            report.failure = {"stage": e.stage, "type": type(e.cause).__name__, "message": str(e.cause)}
            logger.error("%s failed: %s", scenario.name, e)
        return report

    def __pipeline(self, scenario: Scenario, report: Report):
        numerics = scenario.numerics
        system = self.reduce_scenario(scenario, report)
        tau = system.tau

        basis = self.stage(report, "focal", self.jacobi_manager.p_jacobi_basis, system)
        wronskian = self.jacobi_manager.wronskian_drift(basis)
        report.residuals["wronskian_drift"] = wronskian
        report.add(Assertion.below("wronskian_drift", wronskian, WRONSKIAN_TOL))

        focal = self.stage(
            report, "focal", self.jacobi_manager.focal_points, system, basis, numerics.scan_grid, numerics.rank_tol
        )
        report.focal = [
            {"time": p.time, "multiplicity": p.multiplicity, "uncertain": p.uncertain} for p in focal
        ]
        interior = [p for p in focal if p.time < tau - ENDPOINT_SNAP]
        focal_sum = sum(p.multiplicity for p in interior)
        end_multiplicity = sum(p.multiplicity for p in focal if p.time >= tau - ENDPOINT_SNAP)
        report.indices["focal_sum"] = focal_sum
        report.nullities["focal_end"] = end_multiplicity

        form = self.stage(report, "spectral", self.indexform_manager.assemble_Pq, system, numerics.mesh)
        spectral = self.stage(report, "spectral", self.indexform_manager.spectral_index, form)
        self.__record(report, "spectral_Pq", spectral)
        report.add(Assertion.equal("mesh_refinement_Pq", list(spectral.counts()), list(spectral.refined)))

        partition = self.stage(
            report, "broken", self.jacobi_manager.disconjugate_partition,
            system, focal, numerics.scan_grid, numerics.rank_tol,
        )
        broken = self.stage(report, "broken", self.indexform_manager.broken_jacobi_index, system, partition, basis)
        self.__record(report, "broken", broken)
        report.details["partition"] = partition
        report.residuals["broken_asymmetry"] = broken.asymmetry
        report.add(Assertion.below("broken_asymmetry", broken.asymmetry, FORM_SYMMETRY_TOL))

        report.add(Assertion.equal("index_spectral_vs_focal", focal_sum, spectral.index))
        report.add(Assertion.equal("index_broken_vs_focal", focal_sum, broken.index))
        report.add(Assertion.equal("nullity_spectral_vs_focal", end_multiplicity, spectral.nullity))
        report.add(Assertion.equal("nullity_broken_vs_focal", end_multiplicity, broken.nullity))

        for i, point in enumerate(interior):
            restricted = self.stage(
                report, "focal_nullity", self.__restricted_nullity, system.restrict(point.time), numerics.mesh
            )
            report.add(Assertion.equal(f"focal_nullity_identity_{i}", point.multiplicity, restricted))
        if interior:
            descent = self.stage(report, "descent", self.indexform_manager.descent_direction, system, focal=focal)
            report.details["descent"] = {
                "time": descent.time,
                "epsilon": descent.epsilon,
                "value": descent.value,
                "predicted": descent.predicted,
            }
            report.add(Assertion("descent_value_negative", 0.0, descent.value, descent.value < 0.0))

        spectral_PQ = None
        if scenario.Q is not None:
            form_PQ = self.stage(
                report, "spectral_PQ", self.indexform_manager.assemble_PQ, system, scenario.Q, numerics.mesh
            )
            spectral_PQ = self.stage(report, "spectral_PQ", self.indexform_manager.spectral_index, form_PQ)
            self.__record(report, "spectral_PQ", spectral_PQ)
            report.add(Assertion.equal("mesh_refinement_PQ", list(spectral_PQ.counts()), list(spectral_PQ.refined)))

            A, endpoint = self.stage(
                report, "endpoint_form", self.indexform_manager.endpoint_form_A, system, scenario.Q, basis
            )
            self.__record(report, "A", endpoint)
            report.details["A"] = A
            report.residuals["A_asymmetry"] = endpoint.asymmetry
            report.add(Assertion.below("A_asymmetry", endpoint.asymmetry, FORM_SYMMETRY_TOL))
            report.add(Assertion.equal("index_PQ_splitting", spectral.index + endpoint.index, spectral_PQ.index))

        if system.frame.aligned and system.L0 > 0.0:
            self.__normal_restriction(scenario, system, form, spectral, spectral_PQ, report)

        self.__expectations(scenario, report, focal, spectral, spectral_PQ)

    def __restricted_nullity(self, system: ReducedJacobiSystem, mesh: int) -> int:
        form = self.indexform_manager.assemble_Pq(system, mesh)
        return self.indexform_manager.spectral_index(form, check_refinement=False).nullity

    def __normal_restriction(self, scenario, system, form, spectral, spectral_PQ, report: Report):
        numerics = scenario.numerics
        restricted_form = self.stage(
            report, "normal_restriction", self.indexform_manager.assemble_normal, system, None, numerics.mesh
        )
        restricted = self.stage(report, "normal_restriction", self.indexform_manager.spectral_index, restricted_form)
        report.indices["normal_Pq"] = restricted.index
        report.nullities["normal_Pq"] = restricted.nullity
        report.add(Assertion.equal("normal_restriction_Pq", list(spectral.counts()), list(restricted.counts())))

        if spectral.nullity and spectral.nullity == restricted.nullity:
            residual = self.stage(
                report, "normal_restriction", self.indexform_manager.kernel_residual, form, restricted_form
            )
            report.residuals["kernel_map"] = residual
            report.add(Assertion.below("kernel_map", residual, KERNEL_MAP_TOL))

        rng = np.random.default_rng(scenario.seed or 0)
        cross = self.stage(
            report, "normal_restriction", self.indexform_manager.cross_orthogonality, system, CROSS_TRIALS, rng
        )
        report.residuals["cross_orthogonality"] = cross
        report.add(Assertion.below("cross_orthogonality", cross, CROSS_ORTHOGONALITY_TOL))

        if spectral_PQ is not None:
            restricted_PQ = self.stage(
                report, "normal_restriction", self.indexform_manager.normal_restricted_index,
                system, scenario.Q, numerics.mesh,
            )
            report.indices["normal_PQ"] = restricted_PQ.index
            report.nullities["normal_PQ"] = restricted_PQ.nullity
            report.add(
                Assertion.equal("normal_restriction_PQ", list(spectral_PQ.counts()), list(restricted_PQ.counts()))
            )

    @staticmethod
    def __record(report: Report, key: str, result: IndexResult):
        report.indices[key] = result.index
        report.nullities[key] = result.nullity
        if result.eigenvalues:
            report.details[f"{key}_eigenvalues"] = list(result.eigenvalues)

    @staticmethod
    def __expectations(scenario: Scenario, report: Report, focal, spectral, spectral_PQ):
        expect = scenario.expect
        if "index" in expect:
            report.add(Assertion.equal("expected_index", int(expect["index"]), spectral.index))
        if "nullity" in expect:
            report.add(Assertion.equal("expected_nullity", int(expect["nullity"]), spectral.nullity))
        if "focal" in expect:
            expected = [(evaluate_number(t), int(mu)) for t, mu in expect["focal"]]
            report.add(Assertion.equal("expected_focal_count", len(expected), len(focal)))
            for i, ((t, mu), point) in enumerate(zip(expected, focal)):
                report.add(Assertion.close(f"expected_focal_time_{i}", t, point.time, FOCAL_TIME_TOL))
                report.add(Assertion.equal(f"expected_focal_multiplicity_{i}", mu, point.multiplicity))
        for key, source in (("index_PQ", "spectral_PQ"), ("nullity_PQ", "spectral_PQ"), ("A_index", "A")):
            if key not in expect:
                continue
            table = report.nullities if key.startswith("nullity") else report.indices
            report.add(Assertion.equal(f"expected_{key}", int(expect[key]), table.get(source)))

    def trace(self, scenario: Scenario) -> Tuple[Report, Dict[str, pd.DataFrame]]:
        """Run the scenario and build the geodesic and focal-scan trace tables"""
        scenario = self.prepare(scenario)
        report = self.run_scenario(scenario)
        traces: Dict[str, pd.DataFrame] = {}
        try:
            system = self.reduce_scenario(scenario)
        except StageError as e:
            logger.error("no traces for %s: %s", scenario.name, e)
            return report, traces
        grid = scenario.numerics.scan_grid
        traces["geodesic"] = self.curve_manager.trace_table(system.geodesic, grid)
        traces["focal_scan"] = self.jacobi_manager.scan_table(system, grid=grid)
        return report, traces

    def verify_suite(self, name: str, seed: int = 0, count: Optional[int] = None) -> SuiteReport:
        from finsler_morse.suites import SuiteManager

        return SuiteManager.run(self, name, seed, count)

    def describe(self) -> Dict[str, Any]:
        return {"checks": [c.name for c in self.checks], "overrides": dict(self.overrides)}
