"""Conic pseudo-Finsler metrics given by a Lagrangian L on an open cone A.

Every family evaluates L on scalars, numpy arrays or jets, so the same code
serves plain evaluation and exact derivatives. Tensors are read off jet
coefficients: g = ½ ∂²L/∂y∂y, C = ¼ ∂³L/∂y∂y∂y, ∂g/∂x = ½ ∂³L/∂y∂y∂x.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from finsler_morse.config import JET_CHUNK_POINTS, NONDEGENERACY_RCOND
from finsler_morse.errors import (
    ConicDomainError,
    JetDomainError,
    NondegeneracyError,
)
from finsler_morse.geometry.expression import Expression, parse_expression
from finsler_morse.geometry.jets import (
    Jet,
    as_coefficients,
    broadcast_table,
    seed_directions,
)

logger = logging.getLogger(__name__)

FAMILIES = ("euclidean", "riemannian", "randers", "kropina", "custom")


@dataclass(frozen=True)
class TangentVectorAtPoint:
    """Base point plus velocity in a single chart"""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise ValueError(f"point dimension {x.size} differs from velocity dimension {y.size}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.x.size

    def scaled(self, factor: float) -> "TangentVectorAtPoint":
        return TangentVectorAtPoint(self.x, factor * self.y)


def _parse_entry(entry, variables: Sequence[str]):
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        return float(entry)
    expression = parse_expression(str(entry), variables)
    if expression.is_constant:
        return float(expression.tree.value)
    return expression


def _evaluate(entry, x):
    if isinstance(entry, Expression):
        return entry.evaluate(x)
    return entry


def _is_zero(value) -> bool:
    return isinstance(value, float) and value == 0.0


class _QuadraticForm:
    """h(y, y) with entries that are constants or expressions in x"""

    def __init__(self, h, dim: int, variables: Sequence[str]):
        if h is None:
            h = np.eye(dim).tolist()
        if len(h) != dim or any(len(row) != dim for row in h):
            raise ValueError(f"h must be a {dim}x{dim} table")
        self.dim = dim
        self.entries = [[_parse_entry(e, variables) for e in row] for row in h]

    def matrix(self, x) -> np.ndarray:
        shape = np.shape(x[0]) if len(x) else ()
        out = np.empty(shape + (self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                out[..., i, j] = _evaluate(self.entries[i][j], x)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def __call__(self, x, y):
        total = 0.0
        for i in range(self.dim):
            diagonal = _evaluate(self.entries[i][i], x)
            if not _is_zero(diagonal):
                total = total + diagonal * (y[i] * y[i])
            for j in range(i + 1, self.dim):
                upper = _evaluate(self.entries[i][j], x)
                lower = _evaluate(self.entries[j][i], x)
                if _is_zero(upper) and _is_zero(lower):
                    continue
                total = total + (upper + lower) * (y[i] * y[j])
        return total


class _OneForm:
    """ω(y) with components that are constants or expressions in x"""

    def __init__(self, omega, dim: int, variables: Sequence[str]):
        if omega is None or len(omega) != dim:
            raise ValueError(f"omega must have {dim} components")
        self.components = [_parse_entry(c, variables) for c in omega]

    def vector(self, x) -> np.ndarray:
        shape = np.shape(x[0]) if len(x) else ()
        out = np.empty(shape + (len(self.components),))
        for i, component in enumerate(self.components):
            out[..., i] = _evaluate(component, x)
        return out

    def __call__(self, x, y):
        total = 0.0
        for i, component in enumerate(self.components):
            value = _evaluate(component, x)
            if not _is_zero(value):
                total = total + value * y[i]
        return total


def _speed(y) -> np.ndarray:
    return np.sqrt(sum(np.asarray(c, dtype=float) ** 2 for c in y))


class EuclideanModel:
    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.dim = dim

    def lagrangian(self, x, y):
        total = 0.0
        for component in y:
            total = total + component * component
        return total

    def margin(self, x, y) -> np.ndarray:
        return _speed(y)


class RiemannianModel:
    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.dim = dim
        self.h = _QuadraticForm(parameters.get("h"), dim, _names("x", dim))

    def lagrangian(self, x, y):
        return self.h(x, y)

    def margin(self, x, y) -> np.ndarray:
        return _speed(y)


class RandersModel:
    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.dim = dim
        self.h = _QuadraticForm(parameters.get("h"), dim, _names("x", dim))
        self.omega = _OneForm(parameters.get("omega"), dim, _names("x", dim))

    def lagrangian(self, x, y):
        quadratic = self.h(x, y)
        root = quadratic.sqrt() if isinstance(quadratic, Jet) else np.sqrt(quadratic)
        finsler = root + self.omega(x, y)
        return finsler * finsler

    def wind_norm(self, x) -> np.ndarray:
        h = self.h.matrix(x)
        omega = self.omega.vector(x)
        solved = np.linalg.solve(h, omega[..., None])[..., 0]
        return np.sqrt(np.maximum(np.sum(omega * solved, axis=-1), 0.0))

    def margin(self, x, y) -> np.ndarray:
        speed = _speed(y)
        return np.minimum(speed, 1.0 - self.wind_norm(x))


class KropinaModel:
    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.dim = dim
        self.h = _QuadraticForm(parameters.get("h"), dim, _names("x", dim))
        self.omega = _OneForm(parameters.get("omega"), dim, _names("x", dim))

    def lagrangian(self, x, y):
        quadratic = self.h(x, y)
        wind = self.omega(x, y)
        return (quadratic * quadratic) / (4.0 * (wind * wind))

    def margin(self, x, y) -> np.ndarray:
        speed = _speed(y)
        wind = np.asarray(self.omega(x, y), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(speed > 0.0, -wind / np.where(speed > 0.0, speed, 1.0), 0.0)


class CustomModel:
    def __init__(self, dim: int, parameters: Dict[str, Any]):
        self.dim = dim
        variables = _names("x", dim) + _names("y", dim)
        if "L" not in parameters:
            raise ValueError("custom metric needs an 'L' expression")
        self.expression = parse_expression(str(parameters["L"]), variables)
        domain = parameters.get("domain")
        self.domain = parse_expression(str(domain), variables) if domain else None

    def lagrangian(self, x, y):
        return self.expression.evaluate(list(x) + list(y))

    def margin(self, x, y) -> np.ndarray:
        speed = _speed(y)
        if self.domain is None:
            return speed
        value = np.asarray(self.domain.evaluate(list(x) + list(y)), dtype=float)
        return np.where(speed > 0.0, value, 0.0)


_MODELS = {
    "euclidean": EuclideanModel,
    "riemannian": RiemannianModel,
    "randers": RandersModel,
    "kropina": KropinaModel,
    "custom": CustomModel,
}


@lru_cache(maxsize=None)
def _names(prefix: str, dim: int) -> Tuple[str, ...]:
    return tuple(f"{prefix}{i + 1}" for i in range(dim))


@dataclass(frozen=True, eq=False)
class MetricSpec:
    """Immutable description of a conic pseudo-Finsler metric.

    Args:
        family: one of ``euclidean``, ``riemannian``, ``randers``, ``kropina``, ``custom``
        dim: chart dimension n
        parameters: family data. ``h`` is an n×n table and ``omega`` an
            n-vector of numbers or expression strings in ``x1..xn``; the
            custom family takes ``L`` (in ``x1..xn, y1..yn``) and an
            optional ``domain`` expression positive exactly on A.

    Examples:
        ```python
        sphere = MetricSpec.riemannian([["1", "0"], ["0", "sin(x1)^2"]])
        wind = MetricSpec.kropina(omega=[-1.0, 0.0], dim=2)
        ```
    """

    family: str
    dim: int
    parameters: Dict[str, Any] = field(default_factory=dict)
    model: Any = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in _MODELS:
            raise ValueError(f"unknown metric family '{self.family}', expected one of {FAMILIES}")
        if int(self.dim) < 1:
            raise ValueError("metric dimension must be positive")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "parameters", dict(self.parameters))
        object.__setattr__(self, "model", _MODELS[self.family](self.dim, self.parameters))

    @classmethod
    def euclidean(cls, dim: int) -> "MetricSpec":
        return cls("euclidean", dim)

    @classmethod
    def riemannian(cls, h) -> "MetricSpec":
        return cls("riemannian", len(h), {"h": h})

    @classmethod
    def randers(cls, omega, h=None, dim: Optional[int] = None) -> "MetricSpec":
        return cls("randers", dim or len(omega), {"h": h, "omega": omega})

    @classmethod
    def kropina(cls, omega, h=None, dim: Optional[int] = None) -> "MetricSpec":
        return cls("kropina", dim or len(omega), {"h": h, "omega": omega})

    @classmethod
    def custom(cls, expression: str, dim: int, domain: Optional[str] = None) -> "MetricSpec":
        parameters = {"L": expression}
        if domain:
            parameters["domain"] = domain
        return cls("custom", dim, parameters)

    @classmethod
    def from_table(cls, table: Dict[str, Any]) -> "MetricSpec":
        table = dict(table)
        family = table.pop("family", None)
        dim = table.pop("dim", None)
        if family is None:
            raise ValueError("metric table needs a 'family' key")
        if dim is None:
            if "h" in table:
                dim = len(table["h"])
            elif "omega" in table:
                dim = len(table["omega"])
            else:
                raise ValueError("metric table needs a 'dim' key")
        return cls(family, int(dim), table)

    def describe(self) -> Dict[str, Any]:
        payload = {"family": self.family, "dim": self.dim}
        for key in sorted(self.parameters):
            if self.parameters[key] is not None:
                payload[key] = self.parameters[key]
        return payload

    def lagrangian(self, x, y):
        return self.model.lagrangian(x, y)

    def domain_margin(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        xs = [x[..., i] for i in range(self.dim)]
        ys = [y[..., i] for i in range(self.dim)]
        return np.asarray(self.model.margin(xs, ys), dtype=float)


@dataclass(frozen=True)
class FundamentalTensor:
    base: TangentVectorAtPoint
    g: np.ndarray
    g_inv: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CartanTensor:
    base: TangentVectorAtPoint
    C: np.ndarray


@dataclass(frozen=True)
class FiberDerivatives:
    """Batched L partials: H = L_yy, T = L_yyz, Q = L_yyzz with z = (x, y)"""

    H: np.ndarray
    T: np.ndarray
    Q: Optional[np.ndarray] = None


@lru_cache(maxsize=None)
def _fiber_configs(dim: int, lift: bool) -> np.ndarray:
    pairs = [(i, j) for i in range(dim) for j in range(i, dim)]
    if lift:
        extras = [(a, b) for a in range(2 * dim) for b in range(a, 2 * dim)]
    else:
        extras = [(a,) for a in range(2 * dim)]
    return np.array([pair + extra for pair in pairs for extra in extras], dtype=np.intp)


class MetricManager:
    """Handles Lagrangian evaluation and the tensors derived from it"""

    @staticmethod
    def eval_L(metric: MetricSpec, v: TangentVectorAtPoint) -> float:
        """Value of L at v ∈ A; use ``MetricSpec.lagrangian`` for jet arguments"""
        MetricManager.require_domain(metric, v)
        return float(metric.lagrangian(list(v.x), list(v.y)))

    @staticmethod
    def in_domain(metric: MetricSpec, v: TangentVectorAtPoint) -> bool:
        if v.dim != metric.dim or not np.any(v.y != 0.0):
            return False
        if not (np.all(np.isfinite(v.x)) and np.all(np.isfinite(v.y))):
            return False
        try:
            margin = float(metric.domain_margin(v.x, v.y))
            if not margin > 0.0:
                return False
            value = metric.lagrangian(list(v.x), list(v.y))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            return False
        return bool(np.isfinite(value))

    @staticmethod
    def require_domain(metric: MetricSpec, v: TangentVectorAtPoint):
        if not MetricManager.in_domain(metric, v):
            raise ConicDomainError(
                f"{metric.family} metric: vector y={v.y.tolist()} at x={v.x.tolist()} is outside A"
            )

    @staticmethod
    def lagrangian_partials(
        metric: MetricSpec, x: np.ndarray, y: np.ndarray, directions: Sequence[np.ndarray]
    ) -> np.ndarray:
        """Jet coefficient table of L with generator k seeded along ``directions[k]``.

        Args:
            x, y: arrays of shape (..., n)
            directions: arrays broadcastable to (..., 2n), one per generator

        Returns:
            array of shape (2**len(directions), ...) where entry ``mask`` is
            the mixed directional derivative over the generators in ``mask``.
        """
        point = np.concatenate([np.asarray(x, float), np.asarray(y, float)], axis=-1)
        coordinates = seed_directions(point, directions)
        n = metric.dim
        try:
            value = metric.lagrangian(coordinates[:n], coordinates[n:])
        except JetDomainError as e:
            raise ConicDomainError(f"Lagrangian evaluation left the domain: {e}") from e
        shape = np.broadcast_shapes(point.shape, *(np.shape(d) for d in directions))[:-1]
        return broadcast_table(as_coefficients(value, len(directions)), shape)

    @staticmethod
    def fiber_derivatives(
        metric: MetricSpec, x: np.ndarray, y: np.ndarray, lift: bool = False
    ) -> FiberDerivatives:
        """L_yy, L_yyz and (with ``lift``) L_yyzz at a batch of points (P, n)"""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = metric.dim
        configs = _fiber_configs(n, lift)
        basis = np.eye(2 * n)
        directions = [basis[n + configs[:, 0]], basis[n + configs[:, 1]], basis[configs[:, 2]]]
        if lift:
            directions.append(basis[configs[:, 3]])
        i, j, a = configs[:, 0], configs[:, 1], configs[:, 2]

        points = x.shape[0]
        H = np.zeros((points, n, n))
        T = np.zeros((points, n, n, 2 * n))
        Q = np.zeros((points, n, n, 2 * n, 2 * n)) if lift else None
        for start in range(0, points, max(1, JET_CHUNK_POINTS)):
            stop = min(points, start + max(1, JET_CHUNK_POINTS))
            table = MetricManager.lagrangian_partials(
                metric,
                x[start:stop, None, :],
                y[start:stop, None, :],
                [d[None] for d in directions],
            )
            chunk = slice(start, stop)
            H[chunk, i, j] = table[0b0011]
            H[chunk, j, i] = table[0b0011]
            T[chunk, i, j, a] = table[0b0111]
            T[chunk, j, i, a] = table[0b0111]
            if lift:
                b = configs[:, 3]
                T[chunk, i, j, b] = table[0b1011]
                T[chunk, j, i, b] = table[0b1011]
                for p, q in ((i, j), (j, i)):
                    Q[chunk, p, q, a, b] = table[0b1111]
                    Q[chunk, p, q, b, a] = table[0b1111]
        return FiberDerivatives(H=H, T=T, Q=Q)

    @staticmethod
    def check_nondegenerate(g: np.ndarray, where: str = ""):
        g = np.asarray(g)
        if g.size == 0:
            return
        rcond = 1.0 / np.linalg.cond(g)
        if not np.all(np.isfinite(g)) or not rcond >= NONDEGENERACY_RCOND:
            raise NondegeneracyError(
                f"fundamental tensor is degenerate{where}: reciprocal condition {rcond:.3e}"
            )

    @staticmethod
    def fundamental_tensor(metric: MetricSpec, v: TangentVectorAtPoint) -> FundamentalTensor:
        MetricManager.require_domain(metric, v)
        n = metric.dim
        basis = np.eye(2 * n)
        i, j = np.divmod(np.arange(n * n), n)
        table = MetricManager.lagrangian_partials(
            metric, v.x, v.y, [basis[n + i], basis[n + j]]
        )
        g = 0.5 * table[0b11].reshape(n, n)
        MetricManager.check_nondegenerate(g, f" at y={v.y.tolist()}")
        return FundamentalTensor(base=v, g=g, g_inv=np.linalg.inv(g))

    @staticmethod
    def cartan_tensor(metric: MetricSpec, v: TangentVectorAtPoint) -> CartanTensor:
        MetricManager.require_domain(metric, v)
        n = metric.dim
        basis = np.eye(2 * n)
        i, rest = np.divmod(np.arange(n**3), n * n)
        j, k = np.divmod(rest, n)
        table = MetricManager.lagrangian_partials(
            metric, v.x, v.y, [basis[n + i], basis[n + j], basis[n + k]]
        )
        return CartanTensor(base=v, C=0.25 * table[0b111].reshape(n, n, n))

    @staticmethod
    def dg_dx(metric: MetricSpec, v: TangentVectorAtPoint) -> np.ndarray:
        """∂g_ij/∂x^m as an array indexed [i, j, m]"""
        MetricManager.require_domain(metric, v)
        n = metric.dim
        basis = np.eye(2 * n)
        i, rest = np.divmod(np.arange(n**3), n * n)
        j, m = np.divmod(rest, n)
        table = MetricManager.lagrangian_partials(
            metric, v.x, v.y, [basis[n + i], basis[n + j], basis[m]]
        )
        return 0.5 * table[0b111].reshape(n, n, n)

    @staticmethod
    def get_checks() -> List["IdentityCheck"]:
        """Return the randomized identities of L, g and C"""
        from finsler_morse.geometry.checks import IdentityCheck, relative, sample_tangent

        def homogeneity(metric, rng):
            v = sample_tangent(metric, rng)
            value = MetricManager.eval_L(metric, v)
            worst = 0.0
            for factor in (0.5, 2.0, 7.3):
                scaled = MetricManager.eval_L(metric, v.scaled(factor))
                worst = max(worst, abs(scaled - factor**2 * value) / max(abs(value), 1e-300))
            return worst

        def scale_invariance(metric, rng):
            v = sample_tangent(metric, rng)
            g = MetricManager.fundamental_tensor(metric, v).g
            worst = 0.0
            for factor in (0.5, 2.0, 7.3):
                scaled = MetricManager.fundamental_tensor(metric, v.scaled(factor)).g
                worst = max(worst, relative(np.max(np.abs(scaled - g)), np.max(np.abs(g))))
            return worst

        def self_pairing(metric, rng):
            v = sample_tangent(metric, rng)
            g = MetricManager.fundamental_tensor(metric, v).g
            value = MetricManager.eval_L(metric, v)
            return abs(v.y @ g @ v.y - value) / max(abs(value), 1e-300)

        def cartan_contraction(metric, rng):
            v = sample_tangent(metric, rng)
            C = MetricManager.cartan_tensor(metric, v).C
            return float(np.max(np.abs(np.einsum("ijk,k->ij", C, v.y))))

        def finite_difference(metric, rng):
            v = sample_tangent(metric, rng)
            g = MetricManager.fundamental_tensor(metric, v).g
            step = 1e-4
            n = metric.dim
            estimate = np.empty((n, n))
            basis = np.eye(n)
            for i in range(n):
                for j in range(n):
                    total = 0.0
                    for si, sj, sign in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                        y = v.y + step * (si * basis[i] + sj * basis[j])
                        total += sign * float(metric.lagrangian(list(v.x), list(y)))
                    estimate[i, j] = total / (8.0 * step**2)
            return relative(np.max(np.abs(estimate - g)), np.max(np.abs(g)))

        return [
            IdentityCheck("lagrangian_homogeneity", 1e-10, homogeneity),
            IdentityCheck("fundamental_tensor_scale_invariance", 1e-10, scale_invariance),
            IdentityCheck("fundamental_tensor_self_pairing", 1e-10, self_pairing),
            IdentityCheck("cartan_contraction", 1e-10, cartan_contraction),
            IdentityCheck("fundamental_tensor_finite_difference", 1e-6, finite_difference),
        ]

    @staticmethod
    def fundamental_batch(metric: MetricSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """g at a batch of points (P, n) without domain checks"""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = metric.dim
        basis = np.eye(2 * n)
        i, j = np.divmod(np.arange(n * n), n)
        table = MetricManager.lagrangian_partials(
            metric, x[:, None, :], y[:, None, :], [basis[n + i], basis[n + j]]
        )
        return 0.5 * table[0b11].reshape(x.shape[0], n, n)
