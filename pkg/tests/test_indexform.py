import numpy as np
import pytest

from finsler_morse.errors import MeshError, PreconditionError
from finsler_morse.geometry import indexform
from finsler_morse.geometry.curves import CurveManager
from finsler_morse.geometry.indexform import IndexFormManager, IndexLemmaReport
from finsler_morse.geometry.jacobi import JacobiManager
from finsler_morse.geometry.submanifold import Submanifold
from finsler_morse.scenarios import ScenarioManager


def _point_to_circle(reduced, plane, start, tau):
    return reduced(plane, start, [1.0, 0.0], tau, Submanifold.point(start))


@pytest.mark.parametrize("tau, expected", [(0.5, (0, 0)), (1.0, (0, 1)), (1.5, (1, 0))])
def test_circle_spectral_counts(circle_system, tau, expected):
    result = IndexFormManager.spectral_index(IndexFormManager.assemble_Pq(circle_system(tau)))
    assert result.counts() == expected
    assert result.refined == expected


def test_sphere_index_counts_conjugate_points(sphere_system):
    result = IndexFormManager.spectral_index(IndexFormManager.assemble_Pq(sphere_system(7.0)))
    assert result.counts() == (2, 0)


def test_flat_form_is_positive(reduced, plane):
    system = reduced(plane, [0.0, 0.0], [1.0, 0.0], 2.0, Submanifold.point([0.0, 0.0]))
    result = IndexFormManager.spectral_index(IndexFormManager.assemble_Pq(system), check_refinement=False)
    assert result.counts() == (0, 0)
    assert result.eigenvalues[0] == pytest.approx((np.pi / 2.0) ** 2, rel=1e-3)


def test_form_value_of_sine_field(reduced, plane):
    system = reduced(plane, [0.0, 0.0], [1.0, 0.0], 2.0)

    def X(t):
        t = np.atleast_1d(t)
        return np.column_stack([np.sin(np.pi * t / 2.0), np.zeros_like(t)])

    def dX(t):
        t = np.atleast_1d(t)
        return np.column_stack([np.pi / 2.0 * np.cos(np.pi * t / 2.0), np.zeros_like(t)])

    assert IndexFormManager.form_value(system, X, dX) == pytest.approx(np.pi**2 / 4.0, rel=1e-10)


def test_kernel_field_at_focal_end(circle_system):
    system = circle_system(1.0)
    form = IndexFormManager.assemble_Pq(system)
    kernel = IndexFormManager.kernel_basis(form)
    assert len(kernel) == 1
    field = kernel[0]
    nodes = form.nodes
    tangent = field[:, 0] / field[0, 0]
    assert np.allclose(tangent, 1.0 - nodes, atol=1e-3)
    assert np.allclose(field[:, 1], 0.0, atol=1e-6 * abs(field[0, 0]))


def test_jacobi_kernel_field_has_zero_form(circle_system):
    system = circle_system(1.0)

    def X(t):
        t = np.atleast_1d(t)
        return np.column_stack([1.0 - t, np.zeros_like(t)])

    def dX(t):
        t = np.atleast_1d(t)
        return np.column_stack([-np.ones_like(t), np.zeros_like(t)])

    assert IndexFormManager.form_value(system, X, dX) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("tau", [0.5, 1.5])
def test_broken_jacobi_agrees_with_spectral_on_circle(circle_system, tau):
    system = circle_system(tau)
    partition = JacobiManager.disconjugate_partition(system)
    broken = IndexFormManager.broken_jacobi_index(system, partition)
    spectral = IndexFormManager.spectral_index(IndexFormManager.assemble_Pq(system), check_refinement=False)
    assert broken.counts() == spectral.counts()
    assert broken.asymmetry < 1e-6


def test_broken_jacobi_on_sphere(sphere_system):
    system = sphere_system(7.0)
    broken = IndexFormManager.broken_jacobi_index(system, JacobiManager.disconjugate_partition(system))
    assert broken.counts() == (2, 0)


@pytest.mark.parametrize(
    "start, tau, A_value, index_PQ, nullity_PQ",
    [
        ([-3.0, 0.0], 4.0, -0.75, 1, 0),
        ([-3.0, 0.0], 2.0, 1.5, 0, 0),
        ([0.0, 0.0], 1.0, 0.0, 0, 1),
    ],
)
def test_point_to_circle_endpoint_form(reduced, plane, unit_circle, start, tau, A_value, index_PQ, nullity_PQ):
    system = _point_to_circle(reduced, plane, start, tau)
    A, result = IndexFormManager.endpoint_form_A(system, unit_circle)
    assert A.shape == (1, 1)
    assert A[0, 0] == pytest.approx(A_value, abs=1e-7)
    assert result.index == (1 if A_value < 0 else 0)

    spectral = IndexFormManager.spectral_index(IndexFormManager.assemble_PQ(system, unit_circle))
    assert spectral.counts() == (index_PQ, nullity_PQ)


def test_descent_direction_on_circle(circle_system):
    direction = IndexFormManager.descent_direction(circle_system(1.5))
    assert direction.time == pytest.approx(1.0, abs=1e-6)
    assert direction.value < 0.0
    assert direction.value == pytest.approx(direction.predicted, rel=1e-3, abs=1e-8)


def test_descent_direction_needs_focal_point(circle_system):
    with pytest.raises(PreconditionError):
        IndexFormManager.descent_direction(circle_system(0.5))


def test_index_lemma_holds_before_focal_point(circle_system, rng):
    report = IndexFormManager.index_lemma_check(circle_system(0.5), 10, rng)
    assert report.ok
    assert report.passed == 10
    assert report.worst_gap > -1e-9


@pytest.mark.parametrize("build, tau", [("circle_system", 0.5), ("sphere_system", 2.5)])
def test_index_lemma_equality_on_jacobi_field(request, rng, build, tau):
    system = request.getfixturevalue(build)(tau)
    report = IndexFormManager.index_lemma_check(system, 2, rng)
    assert report.jacobi_gap <= 1e-7
    assert report.jacobi_distance <= 1e-6
    assert report.ok


def test_index_lemma_flags_gap_on_jacobi_field():
    report = IndexLemmaReport(trials=1, passed=1, worst_gap=0.0, equality_violations=0, jacobi_gap=1e-3)
    assert not report.jacobi_equality
    assert not report.ok


def test_index_lemma_rejects_focal_segment(circle_system, rng):
    with pytest.raises(PreconditionError):
        IndexFormManager.index_lemma_check(circle_system(1.5), 2, rng)


def test_cross_orthogonality(sphere_system, rng):
    assert IndexFormManager.cross_orthogonality(sphere_system(2.5), 5, rng) < 1e-8


def _randers_system(P=None):
    metric = ScenarioManager.random_metric(np.random.default_rng(5), 3, family="randers")
    geodesic = CurveManager.geodesic_ivp(metric, np.zeros(3), np.array([0.3, 0.5, -0.2]), 1.0)
    return JacobiManager.reduce(geodesic, P)


def test_cross_orthogonality_under_randers_metric(rng):
    system = _randers_system()
    times = np.linspace(0.0, system.tau, 5)
    unit = np.zeros((5, 3))
    unit[:, 2] = np.sqrt(system.L0)
    np.testing.assert_allclose(indexform._velocity_coordinates(system.frame, times), unit, atol=1e-8)
    assert IndexFormManager.cross_orthogonality(system, 5, rng) < 1e-8


def test_cross_orthogonality_sees_tilted_velocity(monkeypatch, rng):
    system = _randers_system()
    exact = indexform._velocity_coordinates
    monkeypatch.setattr(indexform, "_velocity_coordinates", lambda frame, t: exact(frame, t) + [0.3, 0.3, 0.0])
    assert IndexFormManager.cross_orthogonality(system, 5, rng) > 1e-4


def test_normal_restriction_matches_full_form(sphere_system):
    system = sphere_system(4.0)
    form = IndexFormManager.assemble_Pq(system)
    restricted = IndexFormManager.assemble_normal(system)
    assert IndexFormManager.normal_restricted_index(system).counts() == (1, 0)
    assert IndexFormManager.spectral_index(form).counts() == (1, 0)
    assert IndexFormManager.kernel_residual(form, restricted) == 0.0


def test_normal_restriction_kernel_at_conjugate_point(sphere_system):
    system = sphere_system(np.pi)
    form = IndexFormManager.assemble_Pq(system)
    restricted = IndexFormManager.assemble_normal(system)
    assert IndexFormManager.kernel_residual(form, restricted) < 1e-6


def test_mesh_too_coarse(circle_system):
    with pytest.raises(MeshError):
        IndexFormManager.assemble_Pq(circle_system(0.5), N=3)
