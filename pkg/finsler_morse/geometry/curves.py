"""Geodesics, covariant differentiation along curves and parallel frames."""

import logging
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline

from finsler_morse.config import (
    BVP_FD_STEP,
    BVP_MAX_ITER,
    BVP_TOL,
    FRAME_TOL,
    ODE_ATOL,
    ODE_MAX_STEP,
    ODE_METHOD,
    ODE_RTOL,
    ORTHOGONALITY_TOL,
)
from finsler_morse.errors import (
    ConicDomainError,
    ConvergenceError,
    DomainExitError,
    IntegrationError,
    JetDomainError,
    NondegeneracyError,
    NotPerpendicularError,
    SignatureError,
    SplittingError,
)
from finsler_morse.geometry.checks import IdentityCheck, relative, sample_tangent
from finsler_morse.geometry.connection import ConnectionManager
from finsler_morse.geometry.metric import (
    MetricManager,
    MetricSpec,
    TangentVectorAtPoint,
)

logger = logging.getLogger(__name__)


def integrate(
    rhs: Callable,
    span: Tuple[float, float],
    state0: np.ndarray,
    rtol: Optional[float] = None,
    atol: Optional[float] = None,
    events=None,
):
    """``solve_ivp`` with the configured method, tolerances and dense output"""
    solution = solve_ivp(
        rhs,
        span,
        np.asarray(state0, dtype=float),
        method=ODE_METHOD,
        rtol=rtol or ODE_RTOL,
        atol=atol or ODE_ATOL,
        max_step=ODE_MAX_STEP if ODE_MAX_STEP > 0 else np.inf,
        dense_output=True,
        events=events,
    )
    if solution.status == -1:
        raise IntegrationError(f"integration failed at t={solution.t[-1]:.6g}: {solution.message}")
    return solution


@dataclass(frozen=True, eq=False)
class Geodesic:
    """Dense solution of the geodesic equation on [0, τ]"""

    metric: MetricSpec
    tau: float
    solution: Any
    L0: float

    @property
    def dim(self) -> int:
        return self.metric.dim

    def state(self, t) -> np.ndarray:
        return self.solution(t)

    def position(self, t) -> np.ndarray:
        return np.asarray(self.solution(t))[: self.dim].T

    def velocity(self, t) -> np.ndarray:
        return np.asarray(self.solution(t))[self.dim : 2 * self.dim].T

    def tangent(self, t: float) -> TangentVectorAtPoint:
        return TangentVectorAtPoint(self.position(t), self.velocity(t))

    @property
    def start(self) -> TangentVectorAtPoint:
        return self.tangent(0.0)

    @property
    def end(self) -> TangentVectorAtPoint:
        return self.tangent(self.tau)

    def samples(self, count: int) -> np.ndarray:
        return np.linspace(0.0, self.tau, count)


@dataclass(frozen=True, eq=False)
class ParallelFrame:
    """Parallel g_γ̇-orthonormal frame E_1..E_n along a geodesic.

    E_1..E_k span T_{γ(0)}P at t = 0 and, when ``aligned``, E_n = γ̇/√L₀.
    ``solution`` integrates (x, y, E) together, columns of E flattened.
    """

    geodesic: Geodesic
    solution: Any
    k: int
    aligned: bool

    @property
    def dim(self) -> int:
        return self.geodesic.dim

    @property
    def tau(self) -> float:
        return self.geodesic.tau

    @property
    def L0(self) -> float:
        return self.geodesic.L0

    def position(self, t) -> np.ndarray:
        return np.asarray(self.solution(t))[: self.dim].T

    def velocity(self, t) -> np.ndarray:
        return np.asarray(self.solution(t))[self.dim : 2 * self.dim].T

    def frame(self, t) -> np.ndarray:
        """E(t) with columns E_i; shape (n, n) or (m, n, n) for an array t"""
        n = self.dim
        state = np.asarray(self.solution(t))
        if state.ndim == 1:
            return state[2 * n :].reshape(n, n)
        return state[2 * n :].T.reshape(-1, n, n)

    def gram_deviation(self, samples: int = 65) -> float:
        times = np.linspace(0.0, self.tau, samples)
        E = self.frame(times)
        g = MetricManager.fundamental_batch(self.geodesic.metric, self.position(times), self.velocity(times))
        gram = np.einsum("pai,pab,pbj->pij", E, g, E)
        return float(np.max(np.abs(gram - np.eye(self.dim))))


def _geodesic_rhs(metric: MetricSpec, tracker: List[float]):
    n = metric.dim

    def rhs(t, state):
        tracker[0] = t
        x, y = state[:n], state[n:]
        try:
            acceleration = ConnectionManager.geodesic_acceleration(metric, x, y)
        except np.linalg.LinAlgError as e:
            raise NondegeneracyError(f"singular fiber Hessian at t={t:.6g}") from e
        return np.concatenate([y, acceleration])

    return rhs


def _frame_rhs(metric: MetricSpec, columns: int, tracker: List[float]):
    n = metric.dim

    def rhs(t, state):
        tracker[0] = t
        x, y = state[:n], state[n : 2 * n]
        E = state[2 * n :].reshape(n, columns)
        Gamma = ConnectionManager.connection_batch(metric, x, y).Gamma[0]
        acceleration = -np.einsum("kij,i,j->k", Gamma, y, y)
        transport = -np.einsum("mij,ic,j->mc", Gamma, E, y)
        return np.concatenate([y, acceleration, transport.reshape(-1)])

    return rhs


def _domain_event(metric: MetricSpec):
    n = metric.dim

    def leave(t, state):
        return float(metric.domain_margin(state[:n], state[n : 2 * n]))

    leave.terminal = True
    leave.direction = -1
    return leave


def _g_orthonormalize(g: np.ndarray, vectors: Sequence[np.ndarray], basis: List[np.ndarray]) -> List[np.ndarray]:
    """Append the g-normalized residuals of ``vectors`` to ``basis`` (twice-iterated Gram–Schmidt)"""
    for vector in vectors:
        w = np.array(vector, dtype=float)
        for _ in range(2):
            for e in basis:
                w = w - (e @ g @ w) * e
        norm = np.sqrt(w @ g @ w)
        if not norm > FRAME_TOL:
            raise SplittingError("tangent vectors are linearly dependent")
        basis.append(w / norm)
    return basis


class CurveManager:
    """Handles geodesic integration, transport and curve functionals"""

    @staticmethod
    def geodesic_ivp(
        metric: MetricSpec,
        p: np.ndarray,
        v: np.ndarray,
        tau: float,
        rtol: Optional[float] = None,
        atol: Optional[float] = None,
    ) -> Geodesic:
        """Integrate ẍ = spray(x, ẋ) on [0, τ].

        Raises:
            DomainExitError: γ̇ leaves A before τ; carries the exit time
            IntegrationError: the step size collapsed
        """
        start = TangentVectorAtPoint(p, v)
        MetricManager.require_domain(metric, start)
        if not tau > 0.0:
            raise ValueError("geodesic length parameter τ must be positive")
        L0 = MetricManager.eval_L(metric, start)
        tracker = [0.0]
        try:
            solution = integrate(
                _geodesic_rhs(metric, tracker),
                (0.0, float(tau)),
                np.concatenate([start.x, start.y]),
                rtol,
                atol,
                events=_domain_event(metric),
            )
        except (ConicDomainError, JetDomainError) as e:
            raise DomainExitError(f"geodesic left the domain: {e}", tracker[0]) from e
        if solution.status == 1:
            raise DomainExitError("geodesic left the domain", float(solution.t_events[0][0]))
        logger.debug("geodesic integrated with %d right-hand side evaluations", solution.nfev)
        return Geodesic(metric=metric, tau=float(tau), solution=solution.sol, L0=L0)

    @staticmethod
    def geodesic_bvp(
        metric: MetricSpec,
        p: np.ndarray,
        q: np.ndarray,
        tau: float,
        guess: np.ndarray,
        rtol: Optional[float] = None,
        atol: Optional[float] = None,
    ) -> Geodesic:
        """Damped Newton shooting on the initial velocity so that γ(τ) = q"""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        v = np.asarray(guess, dtype=float)
        MetricManager.require_domain(metric, TangentVectorAtPoint(p, v))

        def shoot(velocity):
            geodesic = CurveManager.geodesic_ivp(metric, p, velocity, tau, rtol, atol)
            return geodesic, geodesic.position(tau) - q

        geodesic, residual = shoot(v)
        for iteration in range(BVP_MAX_ITER):
            error = np.linalg.norm(residual)
            logger.debug("shooting iteration %d: residual %.3e", iteration, error)
            if error <= BVP_TOL:
                return geodesic
            step = BVP_FD_STEP * max(1.0, np.linalg.norm(v))
            jacobian = np.empty((metric.dim, metric.dim))
            for j in range(metric.dim):
                shifted = v.copy()
                shifted[j] += step
                jacobian[:, j] = (shoot(shifted)[1] - residual) / step
            direction = np.linalg.lstsq(jacobian, -residual, rcond=None)[0]

            damping = 1.0
            while damping > 1e-6:
                candidate = v + damping * direction
                try:
                    if MetricManager.in_domain(metric, TangentVectorAtPoint(p, candidate)):
                        trial, trial_residual = shoot(candidate)
                        if np.linalg.norm(trial_residual) < error:
                            v, geodesic, residual = candidate, trial, trial_residual
                            break
                except DomainExitError:
                    pass
                damping *= 0.5
            else:
                raise ConvergenceError(f"shooting line search stalled at residual {error:.3e}")
        if np.linalg.norm(residual) <= BVP_TOL:
            return geodesic
        raise ConvergenceError(
            f"shooting did not converge in {BVP_MAX_ITER} iterations "
            f"(residual {np.linalg.norm(residual):.3e})"
        )

    @staticmethod
    def covariant_derivative_along(
        metric: MetricSpec,
        times: np.ndarray,
        curve: np.ndarray,
        velocity: np.ndarray,
        reference: np.ndarray,
        field: np.ndarray,
        field_derivative: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """D^ξ_ċ ζ = ζ̇ + Γ(ξ)(ζ, ċ) at the sample times.

        All arrays are sampled at ``times`` with shape (m, n); ζ̇ comes from a
        cubic spline through ``field`` unless given.
        """
        curve = np.atleast_2d(curve)
        reference = np.atleast_2d(reference)
        for x, xi in zip(curve, reference):
            MetricManager.require_domain(metric, TangentVectorAtPoint(x, xi))
        if field_derivative is None:
            field_derivative = CubicSpline(times, field, axis=0).derivative()(times)
        Gamma = ConnectionManager.connection_batch(metric, curve, reference).Gamma
        return field_derivative + np.einsum("pijk,pj,pk->pi", Gamma, field, velocity)

    @staticmethod
    def parallel_transport(
        geodesic: Geodesic, X0: np.ndarray, rtol: Optional[float] = None, atol: Optional[float] = None
    ) -> Callable[[Any], np.ndarray]:
        """Parallel field with X(0) = X0; returns a dense t ↦ X(t)"""
        metric = geodesic.metric
        n = metric.dim
        X0 = np.asarray(X0, dtype=float).reshape(n, -1)
        columns = X0.shape[1]
        tracker = [0.0]
        start = geodesic.start
        try:
            solution = integrate(
                _frame_rhs(metric, columns, tracker),
                (0.0, geodesic.tau),
                np.concatenate([start.x, start.y, X0.reshape(-1)]),
                rtol,
                atol,
            )
        except (ConicDomainError, JetDomainError) as e:
            raise DomainExitError(f"transport left the domain: {e}", tracker[0]) from e
        dense = solution.sol

        def field(t):
            state = np.asarray(dense(t))
            if state.ndim == 1:
                values = state[2 * n :].reshape(n, columns)
            else:
                values = state[2 * n :].T.reshape(-1, n, columns)
            return values[..., 0] if columns == 1 else values

        return field

    @staticmethod
    def parallel_frame(
        geodesic: Geodesic,
        P=None,
        tangents: Optional[np.ndarray] = None,
        rtol: Optional[float] = None,
        atol: Optional[float] = None,
    ) -> ParallelFrame:
        """Normalized orthonormal frame adapted to P at γ(0), transported along γ.

        Args:
            geodesic: the geodesic γ
            P: optional submanifold through γ(0)
            tangents: explicit n×k tangent basis of T_{γ(0)}P, used instead of P

        Raises:
            SignatureError: g_{γ̇(0)} not positive definite or L₀ ≤ 0
            NotPerpendicularError: γ̇(0) not g-orthogonal to T_{γ(0)}P
            SplittingError: the tangent vectors are degenerate
        """
        metric = geodesic.metric
        n = metric.dim
        start = geodesic.start
        if tangents is None and P is not None:
            from finsler_morse.geometry.submanifold import SubmanifoldManager

            tangents = SubmanifoldManager.tangent_basis_at_point(P, start.x)
        tangents = np.zeros((n, 0)) if tangents is None else np.asarray(tangents, dtype=float).reshape(n, -1)
        k = tangents.shape[1]
        if k >= n:
            raise SplittingError(f"tangent dimension {k} must be below {n}")

        g = MetricManager.fundamental_tensor(metric, start).g
        if np.min(np.linalg.eigvalsh(g)) <= 0.0 or geodesic.L0 <= 0.0:
            raise SignatureError("fundamental tensor at γ̇(0) is not positive definite")
        unit = start.y / np.sqrt(geodesic.L0)
        for a in range(k):
            scale = np.sqrt(abs(tangents[:, a] @ g @ tangents[:, a]))
            if abs(tangents[:, a] @ g @ unit) > ORTHOGONALITY_TOL * max(1.0, scale):
                raise NotPerpendicularError(
                    f"γ̇(0) is not g-orthogonal to tangent {a}: residual "
                    f"{abs(tangents[:, a] @ g @ unit):.3e}"
                )

        basis = _g_orthonormalize(g, tangents.T, [])
        completed = list(basis) + [unit]
        while len(completed) < n:
            candidates = []
            for e in np.eye(n):
                w = e.copy()
                for b in completed:
                    w = w - (b @ g @ w) * b
                candidates.append(np.sqrt(max(w @ g @ w, 0.0)))
            best = np.eye(n)[int(np.argmax(candidates))]
            completed = _g_orthonormalize(g, [best], completed)
        middle = completed[k + 1 :]
        E0 = np.column_stack(basis + middle + [unit])

        tracker = [0.0]
        try:
            solution = integrate(
                _frame_rhs(metric, n, tracker),
                (0.0, geodesic.tau),
                np.concatenate([start.x, start.y, E0.reshape(-1)]),
                rtol,
                atol,
                events=_domain_event(metric),
            )
        except (ConicDomainError, JetDomainError) as e:
            raise DomainExitError(f"frame transport left the domain: {e}", tracker[0]) from e
        if solution.status == 1:
            raise DomainExitError("frame transport left the domain", float(solution.t_events[0][0]))
        frame = ParallelFrame(geodesic=geodesic, solution=solution.sol, k=k, aligned=True)
        logger.debug("parallel frame: k=%d, Gram deviation %.2e", k, frame.gram_deviation(9))
        return frame

    @staticmethod
    def exp_map(
        metric: MetricSpec, p: np.ndarray, v: np.ndarray, rtol: Optional[float] = None, atol: Optional[float] = None
    ) -> np.ndarray:
        return CurveManager.geodesic_ivp(metric, p, v, 1.0, rtol, atol).position(1.0)

    @staticmethod
    def exp_differential(
        metric: MetricSpec,
        p: np.ndarray,
        v: np.ndarray,
        w: np.ndarray,
        rtol: Optional[float] = None,
        atol: Optional[float] = None,
    ) -> np.ndarray:
        """D exp_p(v)[w] = J(1) for the Jacobi field with J(0) = 0, DJ(0) = w"""
        from finsler_morse.geometry.jacobi import JacobiManager

        geodesic = CurveManager.geodesic_ivp(metric, p, v, 1.0, rtol, atol)
        frame = CurveManager.parallel_frame(geodesic, rtol=rtol, atol=atol)
        system = JacobiManager.reduce(geodesic, frame=frame)
        coordinates = np.linalg.solve(frame.frame(0.0), np.asarray(w, dtype=float))
        column = JacobiManager.jacobi_ivp(system, np.zeros(metric.dim), coordinates)
        return frame.frame(1.0) @ column.value(1.0)[:, 0]

    @staticmethod
    def tangent_normal_split(
        geodesic: Geodesic, times: np.ndarray, X: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """(tan_γ X, nor_γ X) for a field sampled at ``times`` with shape (m, n)"""
        if abs(geodesic.L0) <= 1e-14:
            raise SignatureError("tangent/normal split is undefined along a lightlike geodesic")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_2d(geodesic.velocity(times))
        g = MetricManager.fundamental_batch(geodesic.metric, geodesic.position(times), y)
        coefficient = np.einsum("pi,pij,pj->p", X, g, y) / np.einsum("pi,pij,pj->p", y, g, y)
        tangent = coefficient[:, None] * y
        return tangent, X - tangent

    @staticmethod
    def lagrangian_values(geodesic: Geodesic, times: np.ndarray) -> np.ndarray:
        metric = geodesic.metric
        x = np.atleast_2d(geodesic.position(times))
        y = np.atleast_2d(geodesic.velocity(times))
        return np.asarray(metric.lagrangian(list(x.T), list(y.T)), dtype=float)

    @staticmethod
    def energy(geodesic: Geodesic) -> float:
        value, _ = quad(
            lambda t: float(CurveManager.lagrangian_values(geodesic, np.array([t]))[0]),
            0.0,
            geodesic.tau,
            limit=200,
        )
        return 0.5 * value

    @staticmethod
    def length(geodesic: Geodesic) -> float:
        value, _ = quad(
            lambda t: float(np.sqrt(max(CurveManager.lagrangian_values(geodesic, np.array([t]))[0], 0.0))),
            0.0,
            geodesic.tau,
            limit=200,
        )
        return value

    @staticmethod
    def lagrangian_drift(geodesic: Geodesic, samples: int = 257) -> float:
        values = CurveManager.lagrangian_values(geodesic, geodesic.samples(samples))
        return float(np.max(np.abs(values - geodesic.L0)) / max(1.0, abs(geodesic.L0)))

    @staticmethod
    def euler_lagrange_residual(geodesic: Geodesic, samples: int = 2049) -> float:
        """max |d/dt L_y − L_x| on a fine mesh, relative to max |L_x|, |L_y|"""
        metric = geodesic.metric
        n = metric.dim
        times = geodesic.samples(samples)
        x = geodesic.position(times)
        y = geodesic.velocity(times)
        basis = np.eye(2 * n)
        table = MetricManager.lagrangian_partials(metric, x[:, None, :], y[:, None, :], [basis])
        L_x = table[1][:, :n]
        L_y = table[1][:, n:]
        rate = CubicSpline(times, L_y, axis=0).derivative()(times)
        scale = max(1.0, np.max(np.abs(L_y)), np.max(np.abs(L_x)))
        interior = slice(2, -2)
        return float(np.max(np.abs(rate - L_x)[interior]) / scale)

    @staticmethod
    def signature_check(geodesic: Geodesic, samples: int = 257, strict: bool = True) -> float:
        """Smallest eigenvalue of g_{γ̇(t)} over the samples"""
        times = geodesic.samples(samples)
        g = MetricManager.fundamental_batch(geodesic.metric, geodesic.position(times), geodesic.velocity(times))
        smallest = float(np.min(np.linalg.eigvalsh(g)))
        if strict and smallest <= 0.0:
            raise SignatureError(f"fundamental tensor lost positive definiteness (min eigenvalue {smallest:.3e})")
        return smallest

    @staticmethod
    def trace_table(geodesic: Geodesic, samples: int) -> pd.DataFrame:
        """One row per sample: t, x_i, y_i, L(γ̇(t))"""
        times = geodesic.samples(samples)
        x = np.atleast_2d(geodesic.position(times))
        y = np.atleast_2d(geodesic.velocity(times))
        table = {"t": times}
        for i in range(geodesic.dim):
            table[f"x{i + 1}"] = x[:, i]
        for i in range(geodesic.dim):
            table[f"y{i + 1}"] = y[:, i]
        table["L"] = CurveManager.lagrangian_values(geodesic, times)
        return pd.DataFrame(table)

    @staticmethod
    def get_checks() -> List[IdentityCheck]:
        """Return the randomized identities along integrated geodesics"""

        def random_geodesic(metric, rng):
            v = sample_tangent(metric, rng, box=0.5)
            return CurveManager.geodesic_ivp(metric, v.x, 0.5 * v.y, 1.0)

        def conservation(metric, rng):
            return CurveManager.lagrangian_drift(random_geodesic(metric, rng))

        def frame_orthonormality(metric, rng):
            geodesic = random_geodesic(metric, rng)
            return CurveManager.parallel_frame(geodesic).gram_deviation()

        def metric_compatibility(metric, rng):
            geodesic = random_geodesic(metric, rng)
            n = metric.dim
            times = geodesic.samples(513)
            x, y = geodesic.position(times), geodesic.velocity(times)
            a, b = rng.normal(size=(2, 3, n))
            zeta = a[0] + np.outer(times, a[1]) + np.outer(times**2, a[2])
            eta = b[0] + np.outer(times, b[1]) + np.outer(times**2, b[2])
            d_zeta = a[1] + np.outer(2 * times, a[2])
            d_eta = b[1] + np.outer(2 * times, b[2])
            D_zeta = CurveManager.covariant_derivative_along(metric, times, x, y, y, zeta, d_zeta)
            D_eta = CurveManager.covariant_derivative_along(metric, times, x, y, y, eta, d_eta)
            g = MetricManager.fundamental_batch(metric, x, y)
            pairing = np.einsum("pi,pij,pj->p", zeta, g, eta)
            rate = np.einsum("pi,pij,pj->p", D_zeta, g, eta) + np.einsum("pi,pij,pj->p", zeta, g, D_eta)
            spline = CubicSpline(times, pairing).derivative()(times)
            return relative(np.max(np.abs(spline - rate)[2:-2]), np.max(np.abs(rate)))

        return [
            IdentityCheck("lagrangian_conservation", 1e-8, conservation, draws=20),
            IdentityCheck("parallel_frame_orthonormality", 1e-8, frame_orthonormality, draws=20),
            IdentityCheck("metric_compatibility", 1e-7, metric_compatibility, draws=20),
        ]
