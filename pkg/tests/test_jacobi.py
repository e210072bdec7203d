import numpy as np
import pytest

from finsler_morse.geometry.curves import CurveManager
from finsler_morse.geometry.jacobi import JacobiManager
from finsler_morse.geometry.submanifold import Submanifold, SubmanifoldManager
from finsler_morse.scenarios import ScenarioManager


def times_and_multiplicities(points):
    return [(p.time, p.multiplicity) for p in points]


def test_flat_reduction(plane, unit_circle, reduced):
    system = reduced(plane, [1.0, 0.0], [-1.0, 0.0], 1.5, unit_circle)
    np.testing.assert_allclose(system.r(np.linspace(0.0, 1.5, 7)), 0.0, atol=1e-12)
    np.testing.assert_allclose(system.Q_form, [[1.0]], atol=1e-12)
    assert system.k == 1
    assert system.asymmetry < 1e-12


def test_sphere_reduction(sphere_system):
    system = sphere_system(2.0)
    r = system.r(np.linspace(0.0, 2.0, 9))
    np.testing.assert_allclose(r[:, 0, 0], 1.0, atol=1e-8)
    np.testing.assert_allclose(r[:, 1, :], 0.0, atol=1e-8)
    np.testing.assert_allclose(r[:, :, 1], 0.0, atol=1e-8)


def test_point_basis_in_the_plane(plane, reduced):
    system = reduced(plane, [0.0, 0.0], [1.0, 0.0], 2.0, Submanifold.point([0.0, 0.0]))
    basis = JacobiManager.p_jacobi_basis(system)
    np.testing.assert_allclose(basis.value(1.3), 1.3 * np.eye(2), atol=1e-10)
    assert JacobiManager.focal_points(system) == []
    assert JacobiManager.disconjugate_partition(system) == [0.0, 2.0]


@pytest.mark.parametrize("tau, expected", [(0.5, []), (1.0, [(1.0, 1)]), (1.5, [(1.0, 1)])])
def test_circle_focal_points(circle_system, tau, expected):
    points = JacobiManager.focal_points(circle_system(tau))
    assert [m for _, m in times_and_multiplicities(points)] == [m for _, m in expected]
    for point, (t, _) in zip(points, expected):
        assert point.time == pytest.approx(t, abs=1e-6)
        assert not point.uncertain


def test_sphere_conjugate_points(sphere_system):
    points = JacobiManager.focal_points(sphere_system(7.0))
    assert [p.multiplicity for p in points] == [1, 1]
    assert points[0].time == pytest.approx(np.pi, abs=1e-6)
    assert points[1].time == pytest.approx(2 * np.pi, abs=1e-6)


def test_sphere_in_space_has_double_focal_point(space, reduced):
    P = Submanifold.sphere([0.0, 0.0, 0.0], 1.0)
    system = reduced(space, [0.0, 0.0, 1.0], [0.0, 0.0, -1.0], 1.5, P)
    points = JacobiManager.focal_points(system)
    assert times_and_multiplicities(points)[0][1] == 2
    assert points[0].time == pytest.approx(1.0, abs=1e-6)
    assert len(points) == 1


def test_wronskian_is_constant(sphere_system, circle_system):
    for system in (sphere_system(7.0), circle_system(1.5)):
        basis = JacobiManager.p_jacobi_basis(system)
        assert JacobiManager.wronskian_drift(basis) < 1e-8
        np.testing.assert_allclose(basis.wronskian(0.0), 0.0, atol=1e-12)


def test_conjugate_points_from_an_interior_instant(sphere_system):
    system = sphere_system(7.0)
    points = JacobiManager.conjugate_points(system, 0.5, 7.0)
    assert points[0].time == pytest.approx(0.5 + np.pi, abs=1e-6)
    with pytest.raises(ValueError):
        JacobiManager.conjugate_points(system, 3.0, 8.0)


def test_disconjugate_partition(sphere_system):
    system = sphere_system(7.0)
    nodes = JacobiManager.disconjugate_partition(system)
    assert nodes[0] == 0.0 and nodes[-1] == 7.0
    assert nodes[1] == pytest.approx(np.pi / 2, abs=1e-6)
    assert all(b - a < np.pi for a, b in zip(nodes, nodes[1:]))
    assert nodes == sorted(nodes)


def test_fundamental_solutions(sphere_system):
    system = sphere_system(3.0)
    solutions = JacobiManager.fundamental_solutions(system, 1.0, 3.0)
    V = solutions.value(2.0)
    assert V[0, 0] == pytest.approx(np.cos(1.0), abs=1e-8)
    assert V[0, 2] == pytest.approx(np.sin(1.0), abs=1e-8)
    assert V[1, 3] == pytest.approx(1.0, abs=1e-8)


def test_restriction(sphere_system):
    system = sphere_system(7.0)
    restricted = system.restrict(np.pi)
    assert restricted.tau == pytest.approx(np.pi)
    with pytest.raises(ValueError):
        system.restrict(8.0)


def test_scan_table(circle_system):
    table = JacobiManager.scan_table(circle_system(1.5), grid=300)
    assert list(table.columns) == ["t", "sigma_min", "sigma_ratio", "det"]
    row = table.iloc[(table["t"] - 1.0).abs().argmin()]
    assert row["sigma_min"] < 1e-2


@pytest.mark.parametrize("dim, family", [(2, "riemannian"), (3, "randers")])
def test_identity_checks_on_random_metrics(dim, family):
    checks = JacobiManager.get_checks()
    assert [c.name for c in checks] == ["wronskian_constancy", "wronskian_constancy_round"]
    rng = np.random.default_rng(17)
    metric = ScenarioManager.random_metric(rng, dim, family)
    for check in checks:
        assert check(metric, rng) <= check.tolerance


@pytest.mark.parametrize("dim", [2, 3])
def test_round_start_carries_boundary_form(dim):
    rng = np.random.default_rng([23, dim])
    metric = ScenarioManager.random_metric(rng, dim, "randers")
    P, v = SubmanifoldManager.random_round(metric, rng)
    geodesic = CurveManager.geodesic_ivp(metric, v.x, 0.5 * v.y, 1.0)
    system = JacobiManager.reduce(geodesic, P)
    assert system.k == dim - 1
    assert np.max(np.abs(system.Q_form)) > 1e-3
    basis = JacobiManager.p_jacobi_basis(system)
    assert JacobiManager.wronskian_drift(basis) < 1e-8
