import numpy as np
import pytest

from finsler_morse.errors import ConicDomainError, NotPerpendicularError
from finsler_morse.geometry.curves import CurveManager
from finsler_morse.geometry.metric import MetricSpec
from finsler_morse.geometry.submanifold import Submanifold
from finsler_morse.scenarios import ScenarioManager


def test_straight_line(plane):
    geodesic = CurveManager.geodesic_ivp(plane, np.zeros(2), np.array([1.0, 0.0]), 2.0)
    np.testing.assert_allclose(geodesic.position(1.3), [1.3, 0.0], atol=1e-12)
    np.testing.assert_allclose(geodesic.end.x, [2.0, 0.0], atol=1e-12)
    assert geodesic.L0 == pytest.approx(1.0)


def test_equator_is_a_geodesic(sphere):
    geodesic = CurveManager.geodesic_ivp(sphere, np.array([np.pi / 2, 0.0]), np.array([0.0, 1.0]), 2.0)
    np.testing.assert_allclose(geodesic.position(2.0), [np.pi / 2, 2.0], atol=1e-9)
    assert CurveManager.lagrangian_drift(geodesic) < 1e-9


def test_oblique_sphere_geodesic_conserves_energy(sphere):
    geodesic = CurveManager.geodesic_ivp(sphere, np.array([1.0, 0.0]), np.array([0.3, 0.8]), 3.0)
    assert CurveManager.lagrangian_drift(geodesic) < 1e-8
    assert CurveManager.euler_lagrange_residual(geodesic) < 1e-6


def test_boundary_value_problem(plane):
    geodesic = CurveManager.geodesic_bvp(plane, np.zeros(2), np.array([2.0, 0.0]), 2.0, np.array([0.8, 0.1]))
    np.testing.assert_allclose(geodesic.start.y, [1.0, 0.0], atol=1e-8)


def test_kropina_boundary_value_problem():
    wind = MetricSpec.kropina([-1.0, 0.0], dim=2)
    geodesic = CurveManager.geodesic_bvp(wind, np.zeros(2), np.array([1.0, 0.5]), 1.0, np.array([1.0, 0.5]))
    np.testing.assert_allclose(geodesic.end.x, [1.0, 0.5], atol=1e-8)
    np.testing.assert_allclose(geodesic.position(0.5), [0.5, 0.25], atol=1e-8)


def test_start_outside_the_cone():
    wind = MetricSpec.kropina([-1.0, 0.0], dim=2)
    with pytest.raises(ConicDomainError):
        CurveManager.geodesic_ivp(wind, np.zeros(2), np.array([-1.0, 0.0]), 1.0)


def test_nonpositive_length(plane):
    with pytest.raises(ValueError):
        CurveManager.geodesic_ivp(plane, np.zeros(2), np.array([1.0, 0.0]), 0.0)


def test_exp_map_and_differential(plane):
    p, v, w = np.array([0.5, -1.0]), np.array([0.3, 0.4]), np.array([-1.0, 2.0])
    np.testing.assert_allclose(CurveManager.exp_map(plane, p, v), p + v, atol=1e-12)
    np.testing.assert_allclose(CurveManager.exp_differential(plane, p, v, w), w, atol=1e-9)


def test_exp_differential_on_sphere(sphere):
    # Along the equator at speed 1, a meridian variation J(t) = sin(t) e_1
    p, v = np.array([np.pi / 2, 0.0]), np.array([0.0, 1.5])
    out = CurveManager.exp_differential(sphere, p, v, np.array([1.0, 0.0]))
    np.testing.assert_allclose(out, [np.sin(1.5) / 1.5, 0.0], atol=1e-8)


def test_covariant_derivative_in_the_plane(plane):
    times = np.linspace(0.0, 1.0, 41)
    curve = np.column_stack([times, times**2])
    velocity = np.column_stack([np.ones_like(times), 2 * times])
    result = CurveManager.covariant_derivative_along(plane, times, curve, velocity, velocity, velocity)
    np.testing.assert_allclose(result, np.column_stack([np.zeros_like(times), 2 * np.ones_like(times)]), atol=1e-8)
    dcurve = CurveManager.covariant_derivative_along(plane, times, curve, velocity, velocity, curve)
    np.testing.assert_allclose(dcurve, velocity, atol=1e-6)


def test_parallel_transport_is_constant_in_the_plane(plane):
    geodesic = CurveManager.geodesic_ivp(plane, np.zeros(2), np.array([1.0, 1.0]), 1.0)
    field = CurveManager.parallel_transport(geodesic, np.array([0.2, -0.3]))
    np.testing.assert_allclose(field(0.7), [0.2, -0.3], atol=1e-12)


def test_adapted_frame(plane, unit_circle):
    geodesic = CurveManager.geodesic_ivp(plane, np.array([1.0, 0.0]), np.array([-1.0, 0.0]), 1.5)
    frame = CurveManager.parallel_frame(geodesic, unit_circle)
    E0 = frame.frame(0.0)
    assert frame.k == 1 and frame.aligned
    assert abs(E0[:, 0] @ np.array([0.0, 1.0])) == pytest.approx(1.0)
    np.testing.assert_allclose(E0[:, 1], [-1.0, 0.0], atol=1e-12)
    assert frame.gram_deviation() < 1e-10


def test_frame_along_random_geodesic():
    rng = np.random.default_rng(5)
    metric = ScenarioManager.random_metric(rng, 3, family="randers")
    geodesic = CurveManager.geodesic_ivp(metric, np.zeros(3), np.array([0.3, 0.5, -0.2]), 1.0)
    frame = CurveManager.parallel_frame(geodesic)
    assert frame.gram_deviation() < 1e-8
    unit = frame.velocity(1.0) / np.sqrt(geodesic.L0)
    np.testing.assert_allclose(frame.frame(1.0)[:, -1], unit, atol=1e-8)


def test_frame_rejects_oblique_start(plane, unit_circle):
    geodesic = CurveManager.geodesic_ivp(plane, np.array([1.0, 0.0]), np.array([-1.0, 0.5]), 1.0)
    with pytest.raises(NotPerpendicularError):
        CurveManager.parallel_frame(geodesic, unit_circle)


def test_length_and_energy(plane):
    geodesic = CurveManager.geodesic_ivp(plane, np.zeros(2), np.array([3.0, 4.0]), 1.0)
    assert CurveManager.length(geodesic) == pytest.approx(5.0)
    assert CurveManager.energy(geodesic) == pytest.approx(12.5)


def test_tangent_normal_split(plane):
    geodesic = CurveManager.geodesic_ivp(plane, np.zeros(2), np.array([1.0, 0.0]), 1.0)
    tangent, normal = CurveManager.tangent_normal_split(geodesic, np.array([0.5]), np.array([[2.0, 3.0]]))
    np.testing.assert_allclose(tangent, [[2.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose(normal, [[0.0, 3.0]], atol=1e-12)


def test_trace_table(sphere):
    geodesic = CurveManager.geodesic_ivp(sphere, np.array([np.pi / 2, 0.0]), np.array([0.0, 1.0]), 1.0)
    table = CurveManager.trace_table(geodesic, 11)
    assert list(table.columns) == ["t", "x1", "x2", "y1", "y2", "L"]
    assert len(table) == 11
    np.testing.assert_allclose(table["L"], 1.0, atol=1e-9)


def test_point_frame_has_no_tangent_block(plane):
    geodesic = CurveManager.geodesic_ivp(plane, np.zeros(2), np.array([0.0, 2.0]), 1.0)
    frame = CurveManager.parallel_frame(geodesic, Submanifold.point([0.0, 0.0]))
    assert frame.k == 0
    np.testing.assert_allclose(frame.frame(0.0)[:, -1], [0.0, 1.0], atol=1e-12)
