import numpy as np
import pytest

from finsler_morse.engine import MorseEngine
from finsler_morse.geometry.curves import CurveManager
from finsler_morse.geometry.jacobi import JacobiManager
from finsler_morse.geometry.metric import MetricSpec
from finsler_morse.geometry.submanifold import Submanifold

SPHERE_H = [[1, 0], [0, "sin(x1)^2"]]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def plane():
    return MetricSpec.euclidean(2)


@pytest.fixture
def space():
    return MetricSpec.euclidean(3)


@pytest.fixture
def sphere():
    return MetricSpec.riemannian(SPHERE_H)


@pytest.fixture
def unit_circle():
    return Submanifold.circle([0.0, 0.0], 1.0)


@pytest.fixture
def engine():
    return MorseEngine(verbose=False)


def _reduced(metric, p, v, tau, P=None):
    geodesic = CurveManager.geodesic_ivp(metric, np.asarray(p, float), np.asarray(v, float), tau)
    return JacobiManager.reduce(geodesic, P)


@pytest.fixture
def circle_system(plane, unit_circle):
    """Inward normal from the unit circle, focal point at t = 1"""

    def build(tau):
        return _reduced(plane, [1.0, 0.0], [-1.0, 0.0], tau, unit_circle)

    return build


@pytest.fixture
def sphere_system(sphere):
    """Equator of the unit sphere from a point, conjugate points at multiples of π"""

    def build(tau):
        start = [np.pi / 2, 0.0]
        return _reduced(sphere, start, [0.0, 1.0], tau, Submanifold.point(start))

    return build


@pytest.fixture
def reduced():
    """Geodesic, frame and reduced Jacobi system in one call"""
    return _reduced
