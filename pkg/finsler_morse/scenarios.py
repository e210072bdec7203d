"""Scenario registry: TOML configs, built-in scenarios and random generators."""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from finsler_morse.config import MESH_SIZE, ODE_ATOL, ODE_RTOL, RANK_TOL, SCAN_GRID
from finsler_morse.errors import FinslerMorseError, ScenarioError
from finsler_morse.geometry.curves import CurveManager
from finsler_morse.geometry.expression import evaluate_number
from finsler_morse.geometry.metric import MetricManager, MetricSpec
from finsler_morse.geometry.submanifold import Submanifold, SubmanifoldManager

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"
GEODESIC_MODES = ("ivp", "bvp")


@dataclass(frozen=True)
class Numerics:
    """Per-scenario numerical settings; CLI flags override these"""

    mesh: int = MESH_SIZE
    rtol: float = ODE_RTOL
    atol: float = ODE_ATOL
    rank_tol: float = RANK_TOL
    scan_grid: int = SCAN_GRID

    def override(self, **values) -> "Numerics":
        return replace(self, **{k: v for k, v in values.items() if v is not None})

    @classmethod
    def from_table(cls, table: Dict[str, Any]) -> "Numerics":
        known = {f.name for f in fields(cls)}
        unknown = set(table) - known
        if unknown:
            raise ScenarioError(f"unknown numerics keys: {sorted(unknown)}")
        values = {}
        for key, value in table.items():
            number = evaluate_number(value)
            values[key] = int(number) if key in ("mesh", "scan_grid") else number
        return cls(**values)

    def describe(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class GeodesicSpec:
    mode: str
    tau: float
    start: Tuple[float, ...]
    velocity: Optional[Tuple[float, ...]] = None
    end: Optional[Tuple[float, ...]] = None
    guess: Optional[Tuple[float, ...]] = None

    def describe(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"mode": self.mode, "tau": self.tau, "start": list(self.start)}
        for key in ("velocity", "end", "guess"):
            value = getattr(self, key)
            if value is not None:
                payload[key] = list(value)
        return payload


@dataclass(frozen=True, eq=False)
class Scenario:
    """One geodesic problem: metric, geodesic data, endpoint submanifolds, numerics.

    ``expect`` holds optional known answers (``index``, ``nullity``,
    ``focal`` as [[t, μ], ...], ``index_PQ``, ``nullity_PQ``, ``A_index``)
    that become extra report assertions.
    """

    name: str
    metric: MetricSpec
    geodesic: GeodesicSpec
    P: Submanifold
    Q: Optional[Submanifold] = None
    numerics: Numerics = field(default_factory=Numerics)
    seed: Optional[int] = None
    expect: Dict[str, Any] = field(default_factory=dict)

    def with_numerics(self, **values) -> "Scenario":
        return replace(self, numerics=self.numerics.override(**values))

    def describe(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "metric": self.metric.describe(),
            "geodesic": self.geodesic.describe(),
            "P": self.P.describe(),
            "Q": self.Q.describe() if self.Q is not None else None,
            "numerics": self.numerics.describe(),
        }


def _numbers(values, name: str, dim: Optional[int] = None) -> Tuple[float, ...]:
    if not isinstance(values, (list, tuple)):
        raise ScenarioError(f"'{name}' must be a list of numbers")
    out = tuple(evaluate_number(v) for v in values)
    if dim is not None and len(out) != dim:
        raise ScenarioError(f"'{name}' must have {dim} components, got {len(out)}")
    return out


def _submanifold(table: Dict[str, Any], dim: int, name: str) -> Submanifold:
    table = dict(table)
    for key in ("center", "point", "base", "direction"):
        if key in table:
            table[key] = list(_numbers(table[key], f"{name}.{key}", dim))
    if "radius" in table:
        table["radius"] = evaluate_number(table["radius"])
    if table.get("axes") is not None:
        table["axes"] = [list(_numbers(a, f"{name}.axes", dim)) for a in table["axes"]]
    try:
        return Submanifold.from_table(table, dim)
    except (FinslerMorseError, KeyError, ValueError) as e:
        raise ScenarioError(f"invalid {name}: {e}") from e


def _geodesic(table: Dict[str, Any], dim: int) -> GeodesicSpec:
    mode = table.get("mode", "ivp")
    if mode not in GEODESIC_MODES:
        raise ScenarioError(f"geodesic mode must be one of {GEODESIC_MODES}, got '{mode}'")
    if "tau" not in table or "start" not in table:
        raise ScenarioError("geodesic table needs 'tau' and 'start'")
    tau = evaluate_number(table["tau"])
    if not tau > 0.0:
        raise ScenarioError("geodesic tau must be positive")
    start = _numbers(table["start"], "geodesic.start", dim)
    if mode == "ivp":
        if "velocity" not in table:
            raise ScenarioError("ivp geodesic needs 'velocity'")
        return GeodesicSpec(mode, tau, start, velocity=_numbers(table["velocity"], "geodesic.velocity", dim))
    if "end" not in table or "guess" not in table:
        raise ScenarioError("bvp geodesic needs 'end' and 'guess'")
    return GeodesicSpec(
        mode,
        tau,
        start,
        end=_numbers(table["end"], "geodesic.end", dim),
        guess=_numbers(table["guess"], "geodesic.guess", dim),
    )


def _sphere_metric() -> Dict[str, Any]:
    return {"family": "riemannian", "h": [[1, 0], [0, "sin(x1)^2"]]}


def _sphere_point(tau) -> Dict[str, Any]:
    return {
        "metric": _sphere_metric(),
        "geodesic": {"mode": "ivp", "tau": tau, "start": ["pi/2", 0], "velocity": [0, 1]},
        "P": {"family": "point", "center": ["pi/2", 0]},
    }


def _circle_inward(tau) -> Dict[str, Any]:
    return {
        "metric": {"family": "euclidean", "dim": 2},
        "geodesic": {"mode": "ivp", "tau": tau, "start": [1, 0], "velocity": [-1, 0]},
        "P": {"family": "circle", "center": [0, 0], "radius": 1},
    }


def _point_to_circle(start, tau) -> Dict[str, Any]:
    return {
        "metric": {"family": "euclidean", "dim": 2},
        "geodesic": {"mode": "ivp", "tau": tau, "start": start, "velocity": [1, 0]},
        "P": {"family": "point", "center": start},
        "Q": {"family": "circle", "center": [0, 0], "radius": 1},
    }


BUILTINS: Dict[str, Dict[str, Any]] = {
    "sphere-point-2.5": {**_sphere_point(2.5), "expect": {"index": 0, "nullity": 0, "focal": []}},
    "sphere-point-4": {**_sphere_point(4), "expect": {"index": 1, "nullity": 0, "focal": [["pi", 1]]}},
    "sphere-point-7": {
        **_sphere_point(7),
        "expect": {"index": 2, "nullity": 0, "focal": [["pi", 1], ["2*pi", 1]]},
    },
    "sphere-point-pi": {**_sphere_point("pi"), "expect": {"index": 0, "nullity": 1, "focal": [["pi", 1]]}},
    "euclid-point": {
        "metric": {"family": "euclidean", "dim": 2},
        "geodesic": {"mode": "ivp", "tau": 2, "start": [0, 0], "velocity": [1, 0]},
        "P": {"family": "point", "center": [0, 0]},
        "expect": {"index": 0, "nullity": 0, "focal": []},
    },
    "euclid-circle-inward-0.5": {**_circle_inward(0.5), "expect": {"index": 0, "nullity": 0, "focal": []}},
    "euclid-circle-inward-1.0": {**_circle_inward(1.0), "expect": {"index": 0, "nullity": 1, "focal": [[1, 1]]}},
    "euclid-circle-inward-1.5": {**_circle_inward(1.5), "expect": {"index": 1, "nullity": 0, "focal": [[1, 1]]}},
    "euclid-sphere-inward-1.5": {
        "metric": {"family": "euclidean", "dim": 3},
        "geodesic": {"mode": "ivp", "tau": 1.5, "start": [0, 0, 1], "velocity": [0, 0, -1]},
        "P": {"family": "sphere", "center": [0, 0, 0], "radius": 1},
        "expect": {"index": 2, "nullity": 0, "focal": [[1, 2]]},
    },
    "euclid-point-to-circle-far": {
        **_point_to_circle([-3, 0], 4),
        "expect": {"index": 0, "index_PQ": 1, "A_index": 1},
    },
    "euclid-point-to-circle-near": {
        **_point_to_circle([-3, 0], 2),
        "expect": {"index": 0, "index_PQ": 0, "A_index": 0},
    },
    "euclid-point-to-circle-center": {
        **_point_to_circle([0, 0], 1),
        "expect": {"index": 0, "index_PQ": 0, "nullity_PQ": 1, "A_index": 0},
    },
    "kropina-wind": {
        "metric": {"family": "kropina", "dim": 2, "omega": [-1, 0]},
        "geodesic": {"mode": "bvp", "tau": 1, "start": [0, 0], "end": [1, 0.5], "guess": [1, 0.5]},
        "P": {"family": "point", "center": [0, 0]},
        "expect": {"index": 0, "nullity": 0, "focal": []},
    },
}


def _monomials(dim: int) -> List[str]:
    names = [f"x{i + 1}" for i in range(dim)]
    out = ["1"] + names
    for i in range(dim):
        for j in range(i, dim):
            out.append(f"{names[i]}*{names[j]}")
    return out


def _polynomial(rng: np.random.Generator, monomials: List[str], bound: float) -> str:
    terms = []
    for monomial in monomials:
        c = rng.uniform(-bound, bound)
        terms.append(f"{c:.6f}" if monomial == "1" else f"{c:.6f}*{monomial}")
    return " + ".join(terms)


def _completed_axes(rng: np.random.Generator, pole: np.ndarray) -> List[List[float]]:
    """Orthonormal axes [a1, a2, a3] with a3 = pole direction"""
    q, _ = np.linalg.qr(np.column_stack([pole, rng.normal(size=(3, 2))]))
    if q[:, 0] @ pole < 0.0:
        q[:, 0] = -q[:, 0]
    return [q[:, 1].tolist(), q[:, 2].tolist(), q[:, 0].tolist()]


def _round(rng: np.random.Generator, point: np.ndarray, inward: np.ndarray, radius: float) -> Submanifold:
    """Circle (n = 2) or sphere (n = 3) through ``point`` with inner normal ``inward``"""
    center = point + radius * inward
    if point.size == 2:
        return Submanifold.circle(center.tolist(), radius)
    return Submanifold.sphere(center.tolist(), radius, axes=_completed_axes(rng, -inward))


class ScenarioManager:
    """Handles scenario ingestion, the built-in registry and random families"""

    @staticmethod
    def from_table(table: Dict[str, Any], name: Optional[str] = None) -> Scenario:
        """Build a Scenario from a parsed config table.

        Raises:
            ScenarioError: missing or malformed sections
        """
        table = dict(table)
        for section in ("metric", "geodesic", "P"):
            if section not in table:
                raise ScenarioError(f"scenario is missing the [{section}] table")
        try:
            metric = MetricSpec.from_table(table["metric"])
        except (FinslerMorseError, KeyError, ValueError) as e:
            raise ScenarioError(f"invalid metric: {e}") from e
        dim = metric.dim
        scenario = Scenario(
            name=str(table.get("name", name or "scenario")),
            metric=metric,
            geodesic=_geodesic(table["geodesic"], dim),
            P=_submanifold(table["P"], dim, "P"),
            Q=_submanifold(table["Q"], dim, "Q") if "Q" in table else None,
            numerics=Numerics.from_table(table.get("numerics", {})),
            seed=table.get("seed"),
            expect=dict(table.get("expect", {})),
        )
        for S, key in ((scenario.P, "P"), (scenario.Q, "Q")):
            if S is not None and S.dim != dim:
                raise ScenarioError(f"{key} lives in dimension {S.dim}, metric in {dim}")
        return scenario

    @staticmethod
    def load(path) -> Scenario:
        path = Path(path)
        try:
            with open(path, "rb") as f:
                table = tomllib.load(f)
        except FileNotFoundError as e:
            raise ScenarioError(f"scenario file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ScenarioError(f"cannot parse {path}: {e}") from e
        return ScenarioManager.from_table(table, name=path.stem)

    @staticmethod
    def builtin_names() -> List[str]:
        return list(BUILTINS)

    @staticmethod
    def builtin(name: str) -> Scenario:
        if name not in BUILTINS:
            raise ScenarioError(f"unknown built-in scenario '{name}'")
        return ScenarioManager.from_table(BUILTINS[name], name=name)

    @staticmethod
    def resolve(reference: str) -> Scenario:
        """A built-in name, a path, or a file name under ``scenarios/``"""
        if reference in BUILTINS:
            return ScenarioManager.builtin(reference)
        path = Path(reference)
        if not path.exists() and (SCENARIO_DIR / reference).exists():
            path = SCENARIO_DIR / reference
        return ScenarioManager.load(path)

    @staticmethod
    def random_metric(rng: np.random.Generator, dim: int, family: Optional[str] = None) -> MetricSpec:
        """h = I + ε·S(x) with S symmetric of degree ≤ 2, ε ≤ 0.1; Randers adds a constant |ω| ≤ 0.2"""
        family = family or str(rng.choice(["riemannian", "randers"]))
        epsilon = rng.uniform(0.02, 0.1)
        monomials = _monomials(dim)
        h = [[None] * dim for _ in range(dim)]
        for i in range(dim):
            for j in range(i, dim):
                entry = f"{1.0 if i == j else 0.0} + {epsilon:.6f}*({_polynomial(rng, monomials, 0.2)})"
                h[i][j] = h[j][i] = entry
        if family == "riemannian":
            return MetricSpec.riemannian(h)
        omega = rng.normal(size=dim)
        omega *= rng.uniform(0.0, 0.2) / np.linalg.norm(omega)
        return MetricSpec.randers(omega.tolist(), h=h, dim=dim)

    @staticmethod
    def random_scenario(seed: int, with_Q: bool = False, dim: Optional[int] = None) -> Scenario:
        """Randomized perturbed-metric scenario; deterministic in ``seed``"""
        rng = np.random.default_rng(seed)
        dim = dim or int(rng.choice([2, 3]))
        metric = ScenarioManager.random_metric(rng, dim)
        x0 = rng.uniform(-0.25, 0.25, size=dim)
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        tau = float(rng.uniform(0.6, 1.4))

        if rng.uniform() < 0.5:
            P = Submanifold.point(x0.tolist())
        else:
            P = _round(rng, x0, direction, float(rng.uniform(0.3, 1.0)))
        u = SubmanifoldManager.locate(P, x0)
        start = SubmanifoldManager.normal_vector(metric, P, u, direction, speed=1.0)

        Q = None
        if with_Q:
            geodesic = CurveManager.geodesic_ivp(metric, start.x, start.y, tau)
            end = geodesic.end
            covector = MetricManager.fundamental_tensor(metric, end).g @ end.y
            covector /= np.linalg.norm(covector)
            side = 1.0 if rng.uniform() < 0.5 else -1.0
            Q = _round(rng, end.x, -side * covector, float(rng.uniform(0.3, 1.5)))

        return Scenario(
            name=f"random-{seed}",
            metric=metric,
            geodesic=GeodesicSpec("ivp", tau, tuple(start.x.tolist()), velocity=tuple(start.y.tolist())),
            P=P,
            Q=Q,
            seed=seed,
        )
