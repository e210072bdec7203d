"""Jacobi fields in a parallel frame and focal/conjugate point detection.

Along a geodesic with parallel orthonormal frame E, a field V = v^i E_i is
Jacobi iff v̈ + 𝔯_t v = 0 with 𝔯^{ij} = −g(R(γ̇, E_i)γ̇, E_j). Focal and
conjugate instants are rank drops of the solution matrix M(t), found by
scanning σ_min(M)/σ_max(M) and det M on a grid and refining.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, List, Optional

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar

from finsler_morse.config import (
    CURVATURE_SAMPLES,
    FOCAL_CANDIDATE_RATIO,
    FOCAL_REFINE_TOL,
    MAX_PARTITION_NODES,
    RANK_TOL,
    SCAN_GRID,
    UNCERTAIN_FACTOR,
)
from finsler_morse.errors import PartitionError
from finsler_morse.geometry.checks import IdentityCheck, sample_tangent
from finsler_morse.geometry.connection import ConnectionManager
from finsler_morse.geometry.curves import CurveManager, Geodesic, ParallelFrame, integrate
from finsler_morse.geometry.submanifold import Submanifold, SubmanifoldManager

logger = logging.getLogger(__name__)

ENDPOINT_SNAP = 1e-7


@dataclass(frozen=True, eq=False)
class ReducedJacobiSystem:
    """Frame-coordinate data (E, 𝔯_t, 𝔔, k) of the second variation along γ.

    ``tau`` may be shorter than the geodesic when the system is restricted.
    """

    geodesic: Geodesic
    frame: ParallelFrame
    curvature: CubicSpline
    Q_form: np.ndarray
    k: int
    tau: float
    asymmetry: float = 0.0
    P: Optional[Submanifold] = None
    rtol: Optional[float] = None
    atol: Optional[float] = None

    @property
    def dim(self) -> int:
        return self.geodesic.dim

    @property
    def L0(self) -> float:
        return self.geodesic.L0

    def r(self, t) -> np.ndarray:
        """𝔯_t, shape (n, n) or (m, n, n)"""
        return self.curvature(t)

    def restrict(self, t0: float) -> "ReducedJacobiSystem":
        """The same system on [0, t0]"""
        if not 0.0 < t0 <= self.tau:
            raise ValueError(f"restriction end {t0} must lie in (0, {self.tau}]")
        return replace(self, tau=float(t0))


@dataclass(frozen=True, eq=False)
class JacobiSolutionMatrix:
    """Solutions of v̈ + 𝔯v = 0 as columns of V(t), with derivative W(t) = V̇(t)"""

    system: ReducedJacobiSystem
    solution: Any
    columns: int
    start: float
    end: float

    def _split(self, t):
        n, c = self.system.dim, self.columns
        state = np.asarray(self.solution(t))
        if state.ndim == 1:
            return state[: n * c].reshape(n, c), state[n * c :].reshape(n, c)
        m = state.shape[1]
        return state[: n * c].T.reshape(m, n, c), state[n * c :].T.reshape(m, n, c)

    def value(self, t) -> np.ndarray:
        return self._split(t)[0]

    def derivative(self, t) -> np.ndarray:
        return self._split(t)[1]

    def wronskian(self, t) -> np.ndarray:
        V, W = self._split(t)
        return np.swapaxes(V, -1, -2) @ W - np.swapaxes(W, -1, -2) @ V


@dataclass(frozen=True)
class FocalPoint:
    time: float
    multiplicity: int
    uncertain: bool = False
    ratio: float = 0.0


def _jacobi_rhs(system: ReducedJacobiSystem, columns: int):
    n = system.dim
    size = n * columns

    def rhs(t, state):
        V = state[:size].reshape(n, columns)
        return np.concatenate([state[size:], (-system.r(t) @ V).reshape(-1)])

    return rhs


def _singular_values(M: np.ndarray) -> np.ndarray:
    return np.linalg.svd(M, compute_uv=False)


def _ratio(M: np.ndarray) -> np.ndarray:
    s = _singular_values(M)
    return s[..., -1] / np.maximum(s[..., 0], 1e-300)


class JacobiManager:
    """Handles the reduced Jacobi system and focal point detection"""

    @staticmethod
    def reduce(
        geodesic: Geodesic,
        P: Optional[Submanifold] = None,
        frame: Optional[ParallelFrame] = None,
        samples: int = CURVATURE_SAMPLES,
        rtol: Optional[float] = None,
        atol: Optional[float] = None,
    ) -> ReducedJacobiSystem:
        """Sample 𝔯_t on a uniform grid and build 𝔔 from P's shape operator.

        Raises:
            SignatureError: g_γ̇ is not positive definite along γ
            NotPerpendicularError: γ̇(0) is not orthogonal to P
        """
        metric = geodesic.metric
        if frame is None:
            frame = CurveManager.parallel_frame(geodesic, P, rtol=rtol, atol=atol)
        CurveManager.signature_check(geodesic)

        times = np.linspace(0.0, geodesic.tau, samples)
        E = frame.frame(times)
        F = ConnectionManager.curvature_operator_batch(metric, frame.position(times), frame.velocity(times))
        r = -np.einsum("pai,pab,pbj->pij", E, F, E)
        asymmetry = float(np.max(np.abs(r - np.swapaxes(r, -1, -2))) / max(1.0, np.max(np.abs(r))))
        r = 0.5 * (r + np.swapaxes(r, -1, -2))
        logger.debug("curvature sampled at %d points, asymmetry %.2e", samples, asymmetry)

        k = frame.k
        Q_form = np.zeros((k, k))
        if P is not None and k:
            start = geodesic.start
            B = SubmanifoldManager.normal_pairing(metric, P, start)
            T = SubmanifoldManager.tangent_basis_at_point(P, start.x)
            C = np.linalg.lstsq(T, E[0][:, :k], rcond=None)[0]
            Q_form = C.T @ B @ C
            Q_form = 0.5 * (Q_form + Q_form.T)

        return ReducedJacobiSystem(
            geodesic=geodesic,
            frame=frame,
            curvature=CubicSpline(times, r, axis=0),
            Q_form=Q_form,
            k=k,
            tau=geodesic.tau,
            asymmetry=asymmetry,
            P=P,
            rtol=rtol,
            atol=atol,
        )

    @staticmethod
    def jacobi_ivp(
        system: ReducedJacobiSystem,
        v0: np.ndarray,
        dv0: np.ndarray,
        start: float = 0.0,
        end: Optional[float] = None,
    ) -> JacobiSolutionMatrix:
        """Solve v̈ + 𝔯v = 0 from ``start`` with v = v0, v̇ = dv0 (vectors or n×c matrices)"""
        n = system.dim
        V0 = np.asarray(v0, dtype=float).reshape(n, -1)
        W0 = np.asarray(dv0, dtype=float).reshape(n, -1)
        columns = V0.shape[1]
        end = system.tau if end is None else end
        solution = integrate(
            _jacobi_rhs(system, columns),
            (float(start), float(end)),
            np.concatenate([V0.reshape(-1), W0.reshape(-1)]),
            system.rtol,
            system.atol,
        )
        return JacobiSolutionMatrix(system=system, solution=solution.sol, columns=columns, start=start, end=end)

    @staticmethod
    def p_jacobi_basis(system: ReducedJacobiSystem) -> JacobiSolutionMatrix:
        """Basis J_1..J_n of P-Jacobi fields in frame coordinates.

        J_i(0) = e_i, J̇_i(0) = −𝔔e_i for i ≤ k; J_i(0) = 0, J̇_i(0) = e_i for the
        normal directions; J_n(t) = t√L₀ e_n.
        """
        n, k = system.dim, system.k
        V0 = np.zeros((n, n))
        W0 = np.zeros((n, n))
        V0[:k, :k] = np.eye(k)
        W0[:k, :k] = -system.Q_form
        for i in range(k, n - 1):
            W0[i, i] = 1.0
        W0[n - 1, n - 1] = np.sqrt(system.L0)
        return JacobiManager.jacobi_ivp(system, V0, W0)

    @staticmethod
    def vanishing_basis(system: ReducedJacobiSystem, a: float, b: Optional[float] = None) -> JacobiSolutionMatrix:
        """Jacobi fields with v(a) = 0, v̇(a) = I"""
        n = system.dim
        return JacobiManager.jacobi_ivp(system, np.zeros((n, n)), np.eye(n), start=a, end=b)

    @staticmethod
    def fundamental_solutions(system: ReducedJacobiSystem, a: float, b: float) -> JacobiSolutionMatrix:
        """Columns [Ψ | Φ] with Ψ(a) = I, Ψ̇(a) = 0 and Φ(a) = 0, Φ̇(a) = I"""
        n = system.dim
        V0 = np.hstack([np.eye(n), np.zeros((n, n))])
        W0 = np.hstack([np.zeros((n, n)), np.eye(n)])
        return JacobiManager.jacobi_ivp(system, V0, W0, start=a, end=b)

    @staticmethod
    def _scan(
        solution: JacobiSolutionMatrix,
        a: float,
        b: float,
        grid: int,
        rank_tol: float,
    ) -> List[FocalPoint]:
        times = np.linspace(a, b, grid + 1)[1:]
        step = (b - a) / grid
        M = solution.value(times)
        ratios = _ratio(M)
        dets = np.linalg.det(M)

        def ratio_at(t):
            return float(_ratio(solution.value(t)))

        def det_at(t):
            return float(np.linalg.det(solution.value(t)))

        found: List[float] = []
        for i in range(len(times)):
            left = ratios[i - 1] if i > 0 else np.inf
            right = ratios[i + 1] if i + 1 < len(times) else np.inf
            if ratios[i] <= left and ratios[i] <= right and ratios[i] < FOCAL_CANDIDATE_RATIO:
                lower = times[i - 1] if i > 0 else a + 0.5 * step
                upper = times[i + 1] if i + 1 < len(times) else b
                refined = minimize_scalar(
                    ratio_at, bounds=(lower, upper), method="bounded",
                    options={"xatol": FOCAL_REFINE_TOL},
                )
                found.append(float(refined.x) if ratio_at(refined.x) <= ratios[i] else float(times[i]))
        for i in range(len(times) - 1):
            if dets[i] == 0.0 or np.sign(dets[i]) != np.sign(dets[i + 1]):
                if dets[i] == 0.0:
                    found.append(float(times[i]))
                    continue
                found.append(brentq(det_at, times[i], times[i + 1], xtol=FOCAL_REFINE_TOL))

        focal: List[FocalPoint] = []
        for t in sorted(found):
            if abs(t - b) <= ENDPOINT_SNAP:
                t = b
            if focal and abs(t - focal[-1].time) <= 2.0 * step:
                if ratio_at(t) < focal[-1].ratio:
                    focal[-1] = replace(focal[-1], time=t, ratio=ratio_at(t))
                continue
            focal.append(FocalPoint(time=t, multiplicity=0, ratio=ratio_at(t)))

        result = []
        for point in focal:
            s = _singular_values(solution.value(point.time))
            multiplicity = int(np.sum(s < rank_tol * s[0]))
            if multiplicity:
                result.append(replace(point, multiplicity=multiplicity))
            elif point.ratio < UNCERTAIN_FACTOR * rank_tol:
                relaxed = int(np.sum(s < UNCERTAIN_FACTOR * rank_tol * s[0]))
                logger.warning("uncertain focal point at t=%.10g (ratio %.3e)", point.time, point.ratio)
                result.append(replace(point, multiplicity=relaxed, uncertain=True))
        return result

    @staticmethod
    def focal_points(
        system: ReducedJacobiSystem,
        basis: Optional[JacobiSolutionMatrix] = None,
        grid: int = SCAN_GRID,
        rank_tol: float = RANK_TOL,
    ) -> List[FocalPoint]:
        """P-focal instants in (0, τ] with multiplicities n − rank M(t)"""
        basis = basis or JacobiManager.p_jacobi_basis(system)
        points = JacobiManager._scan(basis, 0.0, system.tau, grid, rank_tol)
        logger.debug("focal points: %s", [(p.time, p.multiplicity) for p in points])
        return points

    @staticmethod
    def conjugate_points(
        system: ReducedJacobiSystem,
        a: float,
        b: float,
        grid: int = SCAN_GRID,
        rank_tol: float = RANK_TOL,
    ) -> List[FocalPoint]:
        """Instants in (a, b] conjugate to a"""
        if not 0.0 <= a < b <= system.tau + 1e-12:
            raise ValueError(f"[{a}, {b}] must be a subinterval of [0, {system.tau}]")
        basis = JacobiManager.vanishing_basis(system, a, b)
        return JacobiManager._scan(basis, a, b, grid, rank_tol)

    @staticmethod
    def disconjugate_partition(
        system: ReducedJacobiSystem,
        focal: Optional[List[FocalPoint]] = None,
        grid: int = SCAN_GRID,
        rank_tol: float = RANK_TOL,
    ) -> List[float]:
        """Nodes 0 = t₀ < … < t_m = τ: [0, t₁] free of P-focal points and each later
        piece free of conjugate pairs. A new node sits halfway to the first
        instant conjugate to the previous one.
        """
        tau = system.tau
        if focal is None:
            focal = JacobiManager.focal_points(system, grid=grid, rank_tol=rank_tol)
        if not focal:
            return [0.0, tau]
        nodes = [0.0, 0.5 * focal[0].time]
        while True:
            a = nodes[-1]
            conjugate = JacobiManager.conjugate_points(system, a, tau, grid, rank_tol)
            if not conjugate:
                nodes.append(tau)
                break
            nodes.append(a + 0.5 * (conjugate[0].time - a))
            if len(nodes) > MAX_PARTITION_NODES:
                raise PartitionError(f"partition exceeded {MAX_PARTITION_NODES} nodes")
        logger.debug("disconjugate partition: %s", nodes)
        return nodes

    @staticmethod
    def wronskian_drift(basis: JacobiSolutionMatrix, samples: int = 257) -> float:
        """max_t |W(t) − W(start)| of the pairwise Wronskians ⟨v_i, v̇_j⟩ − ⟨v̇_i, v_j⟩"""
        times = np.linspace(basis.start, basis.end, samples)
        W = basis.wronskian(times)
        return float(np.max(np.abs(W - W[0])))

    @staticmethod
    def scan_table(
        system: ReducedJacobiSystem, basis: Optional[JacobiSolutionMatrix] = None, grid: int = SCAN_GRID
    ) -> pd.DataFrame:
        """One row per scan-grid sample: t, sigma_min, sigma_ratio, det"""
        basis = basis or JacobiManager.p_jacobi_basis(system)
        times = np.linspace(0.0, system.tau, grid + 1)[1:]
        M = basis.value(times)
        s = _singular_values(M)
        return pd.DataFrame(
            {
                "t": times,
                "sigma_min": s[:, -1],
                "sigma_ratio": s[:, -1] / s[:, 0],
                "det": np.linalg.det(M),
            }
        )

    @staticmethod
    def get_checks() -> List[IdentityCheck]:
        """Return the Wronskian identities for random geodesics"""

        def drift(geodesic, P=None):
            system = JacobiManager.reduce(geodesic, P)
            basis = JacobiManager.p_jacobi_basis(system)
            return max(
                JacobiManager.wronskian_drift(basis),
                float(np.max(np.abs(basis.wronskian(0.0)))),
            )

        def wronskian(metric, rng):
            v = sample_tangent(metric, rng, box=0.5)
            return drift(CurveManager.geodesic_ivp(metric, v.x, 0.5 * v.y, 1.0))

        def wronskian_round(metric, rng):
            P, v = SubmanifoldManager.random_round(metric, rng)
            return drift(CurveManager.geodesic_ivp(metric, v.x, 0.5 * v.y, 1.0), P)

        return [
            IdentityCheck("wronskian_constancy", 1e-8, wronskian, draws=20),
            IdentityCheck("wronskian_constancy_round", 1e-8, wronskian_round, draws=20),
        ]
