"""Embedded endpoint submanifolds and their extrinsic geometry.

A submanifold is an embedding ψ of a k-parameter chart into the n-dimensional
coordinate chart. Embeddings accept jets, so tangent vectors and second
derivatives of ψ are read off jet coefficients like the metric tensors.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import least_squares, root

from finsler_morse.config import ENDPOINT_TOL, NONDEGENERACY_RCOND, ORTHOGONALITY_TOL
from finsler_morse.errors import (
    NotPerpendicularError,
    SplittingError,
    SubmanifoldError,
)
from finsler_morse.geometry.checks import IdentityCheck, relative, sample_tangent
from finsler_morse.geometry.connection import ConnectionManager
from finsler_morse.geometry.curves import CurveManager, Geodesic
from finsler_morse.geometry.expression import parse_expression
from finsler_morse.geometry.jets import Jet, as_coefficients, broadcast_table, seed_directions
from finsler_morse.geometry.metric import MetricManager, MetricSpec, TangentVectorAtPoint

logger = logging.getLogger(__name__)

SUBMANIFOLD_FAMILIES = ("point", "line", "circle", "sphere", "graph", "parametric")


def _cos(t):
    return t.cos() if isinstance(t, Jet) else np.cos(t)


def _sin(t):
    return t.sin() if isinstance(t, Jet) else np.sin(t)


def _sqrt(t):
    return t.sqrt() if isinstance(t, Jet) else np.sqrt(t)


def _vector(values, dim: int, name: str) -> np.ndarray:
    vector = np.asarray(values, dtype=float).reshape(-1)
    if vector.size != dim:
        raise SubmanifoldError(f"{name} must have {dim} components, got {vector.size}")
    return vector


def _combine(base: np.ndarray, terms) -> List[Any]:
    """base + Σ coefficient·axis, component by component (jet friendly)"""
    out = []
    for i in range(base.size):
        total = float(base[i])
        for coefficient, axis in terms:
            if axis[i] != 0.0:
                total = total + coefficient * float(axis[i])
        out.append(total)
    return out


class PointEmbedding:
    k = 0

    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.center = _vector(parameters.get("center", parameters.get("point")), dim, "point")

    def embed(self, u):
        return [float(c) for c in self.center]

    def locate(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(0)


class LineEmbedding:
    k = 1

    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.base = _vector(parameters["base"], dim, "line base")
        self.direction = _vector(parameters["direction"], dim, "line direction")
        if not np.linalg.norm(self.direction) > 0.0:
            raise SubmanifoldError("line direction must be nonzero")

    def embed(self, u):
        return _combine(self.base, [(u[0], self.direction)])

    def locate(self, x: np.ndarray) -> np.ndarray:
        d = self.direction
        return np.array([(x - self.base) @ d / (d @ d)])


def _axes(parameters: Dict[str, Any], dim: int, count: int) -> List[np.ndarray]:
    if parameters.get("axes") is None:
        if dim < count:
            raise SubmanifoldError(f"needs at least {count} chart dimensions")
        return list(np.eye(dim)[:count])
    axes = [_vector(a, dim, "axis") for a in parameters["axes"]]
    if len(axes) != count:
        raise SubmanifoldError(f"expected {count} axes, got {len(axes)}")
    gram = np.array([[a @ b for b in axes] for a in axes])
    if np.max(np.abs(gram - np.eye(count))) > 1e-12:
        raise SubmanifoldError("axes must be Euclidean orthonormal")
    return axes


class CircleEmbedding:
    k = 1

    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.center = _vector(parameters["center"], dim, "circle center")
        self.radius = float(parameters["radius"])
        if not self.radius > 0.0:
            raise SubmanifoldError("circle radius must be positive")
        self.a1, self.a2 = _axes(parameters, dim, 2)

    def embed(self, u):
        theta = u[0]
        return _combine(
            self.center,
            [(self.radius * _cos(theta), self.a1), (self.radius * _sin(theta), self.a2)],
        )

    def locate(self, x: np.ndarray) -> np.ndarray:
        offset = x - self.center
        return np.array([np.arctan2(offset @ self.a2, offset @ self.a1)])


class SphereEmbedding:
    """Graph chart over the pole c + ρ a3: ψ(u) = c + u1 a1 + u2 a2 + √(ρ² − |u|²) a3"""

    k = 2

    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.center = _vector(parameters["center"], dim, "sphere center")
        self.radius = float(parameters["radius"])
        if not self.radius > 0.0:
            raise SubmanifoldError("sphere radius must be positive")
        self.a1, self.a2, self.a3 = _axes(parameters, dim, 3)

    def embed(self, u):
        height = _sqrt(self.radius**2 - u[0] * u[0] - u[1] * u[1])
        return _combine(self.center, [(u[0], self.a1), (u[1], self.a2), (height, self.a3)])

    def locate(self, x: np.ndarray) -> np.ndarray:
        offset = x - self.center
        if offset @ self.a3 <= 0.0:
            raise SubmanifoldError("point lies outside the sphere chart hemisphere")
        return np.array([offset @ self.a1, offset @ self.a2])


class GraphEmbedding:
    """Free coordinates equal the parameters; the others are expressions in u1..uk"""

    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.free = [int(i) for i in parameters["free"]]
        self.k = len(self.free)
        dependent = [i for i in range(dim) if i not in self.free]
        expressions = parameters["expressions"]
        if len(expressions) != len(dependent):
            raise SubmanifoldError(f"graph needs {len(dependent)} expressions")
        variables = [f"u{a + 1}" for a in range(self.k)]
        self.dependent = dict(zip(dependent, (parse_expression(str(e), variables) for e in expressions)))
        self.dim = dim

    def embed(self, u):
        out = []
        for i in range(self.dim):
            if i in self.dependent:
                out.append(self.dependent[i].evaluate(list(u)))
            else:
                out.append(u[self.free.index(i)])
        return out

    def locate(self, x: np.ndarray) -> np.ndarray:
        return np.array([x[i] for i in self.free])


class ParametricEmbedding:
    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.k = int(parameters["k"])
        variables = [f"u{a + 1}" for a in range(self.k)]
        coordinates = parameters["coordinates"]
        if len(coordinates) != dim:
            raise SubmanifoldError(f"parametric embedding needs {dim} coordinate expressions")
        self.coordinates = [parse_expression(str(c), variables) for c in coordinates]
        self.guess = np.asarray(parameters.get("guess", np.zeros(self.k)), dtype=float)

    def embed(self, u):
        return [c.evaluate(list(u)) for c in self.coordinates]

    def locate(self, x: np.ndarray) -> np.ndarray:
        def residual(u):
            return np.array([float(c) for c in self.embed(list(u))]) - x

        return least_squares(residual, self.guess, xtol=1e-15, ftol=1e-15, gtol=1e-15).x


_EMBEDDINGS = {
    "point": PointEmbedding,
    "line": LineEmbedding,
    "circle": CircleEmbedding,
    "sphere": SphereEmbedding,
    "graph": GraphEmbedding,
    "parametric": ParametricEmbedding,
}


@dataclass(frozen=True, eq=False)
class Submanifold:
    """Embedded submanifold ψ: R^k → R^n, 0 ≤ k < n.

    Examples:
        ```python
        circle = Submanifold.circle(center=[0.0, 0.0], radius=1.0)
        pole = Submanifold.point([0.0, 0.0, 1.0])
        ```
    """

    family: str
    dim: int
    parameters: Dict[str, Any] = field(default_factory=dict)
    embedding: Any = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in _EMBEDDINGS:
            raise SubmanifoldError(f"unknown submanifold family '{self.family}'")
        object.__setattr__(self, "parameters", dict(self.parameters))
        embedding = _EMBEDDINGS[self.family](int(self.dim), self.parameters)
        if not 0 <= embedding.k < self.dim:
            raise SubmanifoldError(f"dimension {embedding.k} must lie in [0, {self.dim})")
        object.__setattr__(self, "embedding", embedding)

    @property
    def k(self) -> int:
        return self.embedding.k

    @classmethod
    def point(cls, center) -> "Submanifold":
        return cls("point", len(center), {"center": list(center)})

    @classmethod
    def line(cls, base, direction) -> "Submanifold":
        return cls("line", len(base), {"base": list(base), "direction": list(direction)})

    @classmethod
    def circle(cls, center, radius: float, axes=None) -> "Submanifold":
        return cls("circle", len(center), {"center": list(center), "radius": radius, "axes": axes})

    @classmethod
    def sphere(cls, center, radius: float, axes=None) -> "Submanifold":
        return cls("sphere", len(center), {"center": list(center), "radius": radius, "axes": axes})

    @classmethod
    def from_table(cls, table: Dict[str, Any], dim: int) -> "Submanifold":
        table = dict(table)
        family = table.pop("family", None)
        if family is None:
            raise SubmanifoldError("submanifold table needs a 'family' key")
        return cls(family, int(table.pop("dim", dim)), table)

    def describe(self) -> Dict[str, Any]:
        payload = {"family": self.family, "dim": self.dim, "k": self.k}
        for key in sorted(self.parameters):
            if self.parameters[key] is not None:
                payload[key] = self.parameters[key]
        return payload

    def embed(self, u) -> np.ndarray:
        return np.array([float(c) for c in self.embedding.embed(list(np.atleast_1d(u)))])


@dataclass(frozen=True)
class OrthogonalSplitting:
    """T_pM = T_pP ⊕ (T_pP)^⊥_v with both projections"""

    base: np.ndarray
    v: TangentVectorAtPoint
    tangent: np.ndarray
    complement: np.ndarray
    tan_projection: np.ndarray
    nor_projection: np.ndarray


def _embedding_table(P: Submanifold, u: np.ndarray, directions: Sequence[np.ndarray]) -> np.ndarray:
    coordinates = seed_directions(np.asarray(u, dtype=float), directions)
    values = P.embedding.embed(coordinates)
    shape = np.broadcast_shapes(np.shape(u), *(np.shape(d) for d in directions))[:-1]
    tables = [broadcast_table(as_coefficients(c, len(directions)), shape) for c in values]
    return np.stack(tables, axis=-1)


class SubmanifoldManager:
    """Handles tangent spaces, splittings and shape operators of submanifolds"""

    @staticmethod
    def locate(P: Submanifold, x: np.ndarray) -> np.ndarray:
        """Parameters u with ψ(u) = x (closed form or least squares)"""
        x = _vector(x, P.dim, "point")
        u = np.asarray(P.embedding.locate(x), dtype=float)
        gap = np.linalg.norm(P.embed(u) - x) if P.k else np.linalg.norm(P.embedding.center - x)
        if gap > ENDPOINT_TOL:
            raise SubmanifoldError(f"point {x.tolist()} is not on the {P.family} (distance {gap:.3e})")
        return u

    @staticmethod
    def tangent_basis(P: Submanifold, u: np.ndarray) -> np.ndarray:
        """Columns ∂ψ/∂u^a as an n×k array"""
        if P.k == 0:
            return np.zeros((P.dim, 0))
        table = _embedding_table(P, u, [np.eye(P.k)])
        T = table[1].T
        if np.linalg.matrix_rank(T, tol=1e-12 * max(1.0, np.max(np.abs(T)))) < P.k:
            raise SubmanifoldError(f"embedding Jacobian is rank deficient at u={np.asarray(u).tolist()}")
        return T

    @staticmethod
    def tangent_basis_at_point(P: Submanifold, x: np.ndarray) -> np.ndarray:
        return SubmanifoldManager.tangent_basis(P, SubmanifoldManager.locate(P, x))

    @staticmethod
    def second_derivatives(P: Submanifold, u: np.ndarray) -> np.ndarray:
        """∂²ψ/∂u^a∂u^b as a k×k×n array"""
        k = P.k
        if k == 0:
            return np.zeros((0, 0, P.dim))
        a, b = np.divmod(np.arange(k * k), k)
        basis = np.eye(k)
        table = _embedding_table(P, u, [basis[a], basis[b]])
        return table[3].reshape(k, k, P.dim)

    @staticmethod
    def _tangent_residuals(metric: MetricSpec, v: TangentVectorAtPoint, T: np.ndarray) -> np.ndarray:
        g = MetricManager.fundamental_tensor(metric, v).g
        norms = np.sqrt(np.abs(np.einsum("ia,ij,ja->a", T, g, T)))
        return np.abs(T.T @ g @ v.y) / (np.maximum(norms, 1e-300) * np.sqrt(abs(v.y @ g @ v.y)))

    @staticmethod
    def orthogonality_check(
        P: Optional[Submanifold], Q: Optional[Submanifold], geodesic: Geodesic
    ) -> Dict[str, Optional[float]]:
        """Normalized max |g_γ̇(u, γ̇)| over the tangent bases at both ends"""
        metric = geodesic.metric
        residuals: Dict[str, Optional[float]] = {"start": None, "end": None}
        for key, S, v in (("start", P, geodesic.start), ("end", Q, geodesic.end)):
            if S is None:
                continue
            T = SubmanifoldManager.tangent_basis_at_point(S, v.x)
            values = SubmanifoldManager._tangent_residuals(metric, v, T)
            residuals[key] = float(np.max(values)) if values.size else 0.0
        return residuals

    @staticmethod
    def splitting(metric: MetricSpec, P: Submanifold, v: TangentVectorAtPoint) -> OrthogonalSplitting:
        """Split T_pM along T_pP and its g_v-orthogonal complement.

        Raises:
            SplittingError: g_v restricted to T_pP is degenerate
        """
        u = SubmanifoldManager.locate(P, v.x)
        T = SubmanifoldManager.tangent_basis(P, u)
        g = MetricManager.fundamental_tensor(metric, v).g
        n = metric.dim
        if P.k == 0:
            return OrthogonalSplitting(
                base=v.x, v=v, tangent=T, complement=np.eye(n),
                tan_projection=np.zeros((n, n)), nor_projection=np.eye(n),
            )
        G = T.T @ g @ T
        if 1.0 / np.linalg.cond(G) < NONDEGENERACY_RCOND:
            raise SplittingError("g_v restricted to the tangent space is degenerate")
        tan_projection = T @ np.linalg.solve(G, T.T @ g)
        complement = null_space(T.T @ g)
        return OrthogonalSplitting(
            base=v.x,
            v=v,
            tangent=T,
            complement=complement,
            tan_projection=tan_projection,
            nor_projection=np.eye(n) - tan_projection,
        )

    @staticmethod
    def require_normal(metric: MetricSpec, P: Submanifold, v: TangentVectorAtPoint) -> np.ndarray:
        T = SubmanifoldManager.tangent_basis_at_point(P, v.x)
        if T.shape[1]:
            residual = np.max(SubmanifoldManager._tangent_residuals(metric, v, T))
            if residual > ORTHOGONALITY_TOL:
                raise NotPerpendicularError(f"vector is not g_v-orthogonal to the {P.family} (residual {residual:.3e})")
        return T

    @staticmethod
    def normal_pairing(metric: MetricSpec, P: Submanifold, v: TangentVectorAtPoint) -> np.ndarray:
        """B_ab = g_v(∂²ψ/∂u^a∂u^b + Γ(v)(∂_aψ, ∂_bψ), v) = g_v(S^P_v(∂_a, ∂_b), v), not symmetrized"""
        u = SubmanifoldManager.locate(P, v.x)
        T = SubmanifoldManager.tangent_basis(P, u)
        if P.k == 0:
            return np.zeros((0, 0))
        hessian = SubmanifoldManager.second_derivatives(P, u)
        Gamma = ConnectionManager.connection_data(metric, v).Gamma
        accel = hessian + np.einsum("ijk,ja,kb->abi", Gamma, T, T)
        g = MetricManager.fundamental_tensor(metric, v).g
        return np.einsum("abi,ij,j->ab", accel, g, v.y)

    @staticmethod
    def second_fundamental_form(metric: MetricSpec, P: Submanifold, v: TangentVectorAtPoint) -> np.ndarray:
        """S^P_v(∂_a, ∂_b) as a k×k×n array"""
        u = SubmanifoldManager.locate(P, v.x)
        T = SubmanifoldManager.tangent_basis(P, u)
        if P.k == 0:
            return np.zeros((0, 0, metric.dim))
        split = SubmanifoldManager.splitting(metric, P, v)
        hessian = SubmanifoldManager.second_derivatives(P, u)
        Gamma = ConnectionManager.connection_data(metric, v).Gamma
        accel = hessian + np.einsum("ijk,ja,kb->abi", Gamma, T, T)
        return np.einsum("ij,abj->abi", split.nor_projection, accel)

    @staticmethod
    def shape_operator(metric: MetricSpec, P: Submanifold, v: TangentVectorAtPoint) -> np.ndarray:
        """S̃^P_v in the tangent basis: S̃ ∂_a = Σ_c s[c, a] ∂_c.

        Solved from g_v(S^P_v(u, w), v) = −g_v(S̃ u, w), i.e. s = −G⁻¹B.
        """
        T = SubmanifoldManager.require_normal(metric, P, v)
        if P.k == 0:
            return np.zeros((0, 0))
        SubmanifoldManager.splitting(metric, P, v)
        g = MetricManager.fundamental_tensor(metric, v).g
        G = T.T @ g @ T
        B = SubmanifoldManager.normal_pairing(metric, P, v)
        return -np.linalg.solve(G, B)

    @staticmethod
    def boundary_form(
        metric: MetricSpec, P: Submanifold, v: TangentVectorAtPoint
    ) -> Tuple[np.ndarray, np.ndarray]:
        """−g_v(S̃ e_i, e_j) = B(e_i, e_j) in a g_v-orthonormal basis of T_pP.

        Returns (form, orthonormal basis as n×k columns).
        """
        T = SubmanifoldManager.require_normal(metric, P, v)
        if P.k == 0:
            return np.zeros((0, 0)), T
        g = MetricManager.fundamental_tensor(metric, v).g
        G = T.T @ g @ T
        SubmanifoldManager.splitting(metric, P, v)
        transform = np.linalg.inv(np.linalg.cholesky(G)).T
        B = SubmanifoldManager.normal_pairing(metric, P, v)
        form = transform.T @ B @ transform
        return 0.5 * (form + form.T), T @ transform

    @staticmethod
    def normal_vector(
        metric: MetricSpec, P: Submanifold, u: np.ndarray, hint: np.ndarray, speed: float = 1.0
    ) -> TangentVectorAtPoint:
        """v ∈ (T_pP)^⊥ with √L(v) = speed, found near the direction ``hint``"""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        p = P.embed(u)
        T = SubmanifoldManager.tangent_basis(P, u)
        hint = np.asarray(hint, dtype=float)
        n = metric.dim

        def covector(y):
            table = MetricManager.lagrangian_partials(metric, p, y, [np.eye(2 * n)[n:]])
            return table[1]

        direction = hint
        if P.k:
            def residual(c):
                return covector(hint + T @ c) @ T

            solved = root(residual, np.zeros(P.k), tol=1e-14)
            direction = hint + T @ solved.x
            if np.max(np.abs(residual(solved.x))) > 1e-10 * max(1.0, np.linalg.norm(covector(direction))):
                raise SubmanifoldError(f"no normal vector found near {hint.tolist()}: {solved.message}")
        v = TangentVectorAtPoint(p, direction)
        MetricManager.require_domain(metric, v)
        return v.scaled(speed / np.sqrt(MetricManager.eval_L(metric, v)))

    @staticmethod
    def normal_exp(
        metric: MetricSpec, P: Submanifold, v: TangentVectorAtPoint,
        rtol: Optional[float] = None, atol: Optional[float] = None,
    ) -> np.ndarray:
        SubmanifoldManager.require_normal(metric, P, v)
        return CurveManager.exp_map(metric, v.x, v.y, rtol, atol)

    @staticmethod
    def normal_exp_differential(
        metric: MetricSpec,
        P: Submanifold,
        v: TangentVectorAtPoint,
        tangent: np.ndarray,
        variation: np.ndarray,
        rtol: Optional[float] = None,
        atol: Optional[float] = None,
    ) -> np.ndarray:
        """J(1) for the variation moving the base along ``tangent`` and v by ``variation``.

        The Jacobi field has J(0) = tangent and DJ(0) = variation + Γ(v)(tangent, v).
        """
        from finsler_morse.geometry.jacobi import JacobiManager

        SubmanifoldManager.require_normal(metric, P, v)
        tangent = np.asarray(tangent, dtype=float)
        Gamma = ConnectionManager.connection_data(metric, v).Gamma
        derivative = np.asarray(variation, dtype=float) + np.einsum("ijk,j,k->i", Gamma, tangent, v.y)
        geodesic = CurveManager.geodesic_ivp(metric, v.x, v.y, 1.0, rtol, atol)
        frame = CurveManager.parallel_frame(geodesic, rtol=rtol, atol=atol)
        system = JacobiManager.reduce(geodesic, frame=frame)
        E0 = frame.frame(0.0)
        column = JacobiManager.jacobi_ivp(system, np.linalg.solve(E0, tangent), np.linalg.solve(E0, derivative))
        return frame.frame(1.0) @ column.value(1.0)[:, 0]

    @staticmethod
    def normal_exp_jacobian(
        metric: MetricSpec, P: Submanifold, v: TangentVectorAtPoint,
        rtol: Optional[float] = None, atol: Optional[float] = None,
    ) -> np.ndarray:
        """D exp^{LN}(v) on a basis of T_v(TP^⊥): columns J(1) of the P-Jacobi basis"""
        from finsler_morse.geometry.jacobi import JacobiManager

        SubmanifoldManager.require_normal(metric, P, v)
        geodesic = CurveManager.geodesic_ivp(metric, v.x, v.y, 1.0, rtol, atol)
        system = JacobiManager.reduce(geodesic, P, rtol=rtol, atol=atol)
        basis = JacobiManager.p_jacobi_basis(system)
        return system.frame.frame(1.0) @ basis.value(1.0)

    @staticmethod
    def random_round(metric: MetricSpec, rng: np.random.Generator) -> Tuple[Submanifold, TangentVectorAtPoint]:
        """A circle (n = 2) or sphere (n ≥ 3) through a random point, charted at u = 0,
        with an inward normal there"""
        v = sample_tangent(metric, rng, box=0.5)
        n = metric.dim
        axes = np.linalg.qr(rng.normal(size=(n, n)))[0].T
        d = axes[0]
        radius = rng.uniform(0.5, 2.0)
        center = (v.x + radius * d).tolist()
        if n == 2:
            P = Submanifold.circle(center, radius, axes=[(-d).tolist(), axes[1].tolist()])
        else:
            P = Submanifold.sphere(center, radius, axes=[axes[1].tolist(), axes[2].tolist(), (-d).tolist()])
        return P, SubmanifoldManager.normal_vector(metric, P, np.zeros(P.k), d)

    @staticmethod
    def get_checks() -> List[IdentityCheck]:
        """Return the randomized shape-operator identities"""

        def duality(metric, rng):
            P, v = SubmanifoldManager.random_round(metric, rng)
            S = SubmanifoldManager.second_fundamental_form(metric, P, v)
            s = SubmanifoldManager.shape_operator(metric, P, v)
            T = SubmanifoldManager.tangent_basis_at_point(P, v.x)
            g = MetricManager.fundamental_tensor(metric, v).g
            left = np.einsum("abi,ij,j->ab", S, g, v.y)
            right = np.einsum("ic,ca,ij,jb->ab", T, s, g, T)
            return relative(np.max(np.abs(left + right)), np.max(np.abs(left)))

        def self_adjoint(metric, rng):
            P, v = SubmanifoldManager.random_round(metric, rng)
            s = SubmanifoldManager.shape_operator(metric, P, v)
            T = SubmanifoldManager.tangent_basis_at_point(P, v.x)
            G = T.T @ MetricManager.fundamental_tensor(metric, v).g @ T
            pairing = G @ s
            return relative(np.max(np.abs(pairing - pairing.T)), np.max(np.abs(pairing)))

        return [
            IdentityCheck("shape_operator_duality", 1e-9, duality),
            IdentityCheck("shape_operator_self_adjoint", 1e-9, self_adjoint),
        ]
