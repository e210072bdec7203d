from dataclasses import replace

import numpy as np
import pytest

from finsler_morse.geometry.connection import ConnectionManager
from finsler_morse.geometry.metric import MetricSpec, TangentVectorAtPoint
from finsler_morse.scenarios import ScenarioManager


def vec(x, y):
    return TangentVectorAtPoint(np.asarray(x, float), np.asarray(y, float))


def test_flat_connection_vanishes(space):
    v = vec([0.1, 0.2, 0.3], [1.0, -0.5, 0.2])
    data = ConnectionManager.connection_data(space, v)
    np.testing.assert_allclose(data.Gamma, 0.0, atol=1e-14)
    np.testing.assert_allclose(data.N, 0.0, atol=1e-14)
    np.testing.assert_allclose(ConnectionManager.hh_curvature(space, v).R, 0.0, atol=1e-12)
    np.testing.assert_allclose(ConnectionManager.curvature_operator_matrix(space, v), 0.0, atol=1e-12)


def test_sphere_christoffel_symbols(sphere):
    x = np.array([np.pi / 4, 0.0])
    data = ConnectionManager.connection_data(sphere, vec(x, [0.3, 1.0]))
    s, c = np.sin(x[0]), np.cos(x[0])
    assert data.Gamma[0, 1, 1] == pytest.approx(-s * c)
    assert data.Gamma[1, 0, 1] == pytest.approx(c / s)
    assert data.Gamma[1, 1, 0] == pytest.approx(c / s)
    assert data.Gamma[0, 0, 0] == pytest.approx(0.0, abs=1e-13)


def test_geodesic_acceleration(sphere, plane):
    accel = ConnectionManager.geodesic_acceleration(sphere, np.array([np.pi / 4, 0.0]), np.array([0.0, 1.0]))
    np.testing.assert_allclose(accel, [0.5, 0.0], atol=1e-12)
    flat = ConnectionManager.geodesic_acceleration(plane, np.array([1.0, 2.0]), np.array([0.3, 0.4]))
    np.testing.assert_allclose(flat, 0.0, atol=1e-14)


def test_sphere_flag_curvature(sphere):
    v = vec([np.pi / 3, 0.0], [0.0, 1.0 / np.sin(np.pi / 3)])
    F = ConnectionManager.curvature_operator_matrix(sphere, v)
    np.testing.assert_allclose(F @ v.y, 0.0, atol=1e-10)
    np.testing.assert_allclose(v.y @ F, 0.0, atol=1e-10)
    u = np.array([1.0, 0.0])
    # unit sphere: |g(R(v, u)v, u)| = K·(g(v,v)g(u,u) − g(u,v)²) = 1
    assert abs(ConnectionManager.flag_curvature_form(sphere, v, u, u)) == pytest.approx(1.0, rel=1e-9)


def test_batch_matches_pointwise():
    metric = MetricSpec.randers([0.1, 0.05], h=[[1, 0], [0, "1 + 0.1*x1^2"]], dim=2)
    x = np.array([[0.2, 0.1], [-0.3, 0.4]])
    y = np.array([[1.0, 0.2], [0.4, -1.0]])
    batch = ConnectionManager.connection_batch(metric, x, y)
    for p in range(2):
        single = ConnectionManager.connection_data(metric, vec(x[p], y[p]))
        np.testing.assert_allclose(batch.Gamma[p], single.Gamma, atol=1e-12)


def test_identity_checks_on_random_metrics():
    checks = ConnectionManager.get_checks()
    for draw in range(3):
        rng = np.random.default_rng([11, draw])
        metric = ScenarioManager.random_metric(rng, dim=2 + draw % 2)
        for check in checks:
            assert check(metric, rng) <= check.tolerance, check.name


def _checks():
    return {check.name: check for check in ConnectionManager.get_checks()}


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("family", ["riemannian", "randers"])
def test_riemannian_collapse_on_random_metrics(dim, family):
    rng = np.random.default_rng([17, dim])
    metric = ScenarioManager.random_metric(rng, dim, family)
    checks = _checks()
    assert checks["riemannian_collapse"](metric, rng) <= 1e-10
    assert checks["riemannian_levi_civita"](metric, rng) <= 1e-7


def test_sphere_connection_ignores_direction(sphere):
    x = [np.pi / 3, 0.2]
    first = ConnectionManager.connection_data(sphere, vec(x, [1.0, 0.3]))
    second = ConnectionManager.connection_data(sphere, vec(x, [-0.2, 2.0]))
    np.testing.assert_allclose(first.Gamma, second.Gamma, atol=1e-12)
    np.testing.assert_allclose(
        ConnectionManager.hh_curvature(sphere, vec(x, [1.0, 0.3])).R,
        ConnectionManager.hh_curvature(sphere, vec(x, [-0.2, 2.0])).R,
        atol=1e-10,
    )


def test_levi_civita_check_detects_wrong_connection(monkeypatch):
    rng = np.random.default_rng(5)
    metric = ScenarioManager.random_metric(rng, 2, "riemannian")
    original = ConnectionManager.connection_data

    def shifted(metric, v):
        data = original(metric, v)
        return replace(data, Gamma=data.Gamma + 1e-3)

    monkeypatch.setattr(ConnectionManager, "connection_data", staticmethod(shifted))
    assert _checks()["riemannian_levi_civita"](metric, rng) > 1e-4
