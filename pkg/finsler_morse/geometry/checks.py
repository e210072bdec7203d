"""Randomized identity checks collected from the geometry managers."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from finsler_morse.errors import ConicDomainError


@dataclass(frozen=True)
class IdentityCheck:
    """Residual probe run by the symmetry suite.

    ``func(metric, rng)`` returns a non-negative residual that must stay
    below ``tolerance``. ``draws`` caps the number of draws for checks that
    integrate ODEs; ``None`` means the suite default.
    """

    name: str
    tolerance: float
    func: Callable[..., float]
    draws: Optional[int] = None

    def __call__(self, metric, rng: np.random.Generator) -> float:
        return float(self.func(metric, rng))


def relative(residual: float, scale: float) -> float:
    return float(residual) / max(1.0, float(scale))


def sample_tangent(metric, rng: np.random.Generator, box: float = 1.0, attempts: int = 200):
    """Random admissible (x, y) with x in the box [-box, box]^n"""
    from finsler_morse.geometry.metric import MetricManager, TangentVectorAtPoint

    for _ in range(attempts):
        x = rng.uniform(-box, box, size=metric.dim)
        y = rng.normal(size=metric.dim)
        v = TangentVectorAtPoint(x, y / np.linalg.norm(y))
        if MetricManager.in_domain(metric, v):
            return v
    raise ConicDomainError(f"no admissible vector found for the {metric.family} metric")
