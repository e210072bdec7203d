import numpy as np
import pytest

from finsler_morse.errors import ConicDomainError, NondegeneracyError
from finsler_morse.geometry.metric import MetricManager, MetricSpec, TangentVectorAtPoint
from finsler_morse.scenarios import ScenarioManager


def vec(x, y):
    return TangentVectorAtPoint(np.asarray(x, float), np.asarray(y, float))


def test_euclidean_values(plane):
    assert MetricManager.eval_L(plane, vec([0, 0], [3, 4])) == pytest.approx(25.0)
    g = MetricManager.fundamental_tensor(plane, vec([1, 2], [0.3, -0.7])).g
    np.testing.assert_allclose(g, np.eye(2), atol=1e-14)
    C = MetricManager.cartan_tensor(plane, vec([1, 2], [0.3, -0.7])).C
    np.testing.assert_allclose(C, 0.0, atol=1e-14)


def test_domain(plane):
    assert MetricManager.in_domain(plane, vec([0, 0], [1e-3, 0]))
    assert not MetricManager.in_domain(plane, vec([0, 0], [0, 0]))
    assert not MetricManager.in_domain(plane, vec([0, 0, 0], [1, 0, 0]))
    with pytest.raises(ConicDomainError):
        MetricManager.eval_L(plane, vec([0, 0], [0, 0]))


def test_sphere_fundamental_tensor(sphere):
    x = [np.pi / 3, 0.4]
    g = MetricManager.fundamental_tensor(sphere, vec(x, [0.2, 1.0])).g
    np.testing.assert_allclose(g, np.diag([1.0, np.sin(np.pi / 3) ** 2]), atol=1e-13)
    dg = MetricManager.dg_dx(sphere, vec(x, [0.2, 1.0]))
    assert dg[1, 1, 0] == pytest.approx(np.sin(2 * np.pi / 3))
    assert np.count_nonzero(np.abs(dg) > 1e-13) == 1


def test_kropina_cone():
    wind = MetricSpec.kropina([-1.0, 0.0], dim=2)
    assert MetricManager.in_domain(wind, vec([0, 0], [1, 0.5]))
    assert not MetricManager.in_domain(wind, vec([0, 0], [-1, 0.5]))
    assert not MetricManager.in_domain(wind, vec([0, 0], [0, 1]))
    # L = |y|⁴ / (4 ω(y)²)
    assert MetricManager.eval_L(wind, vec([0, 0], [2, 0])) == pytest.approx(1.0)


def test_randers_properties():
    metric = MetricSpec.randers([0.2, -0.1], dim=2)
    v = vec([0.1, 0.2], [1.0, 0.5])
    alpha = np.linalg.norm(v.y)
    beta = 0.2 * 1.0 - 0.1 * 0.5
    assert MetricManager.eval_L(metric, v) == pytest.approx((alpha + beta) ** 2)
    g = MetricManager.fundamental_tensor(metric, v).g
    assert v.y @ g @ v.y == pytest.approx((alpha + beta) ** 2)
    assert np.all(np.linalg.eigvalsh(g) > 0.0)
    C = MetricManager.cartan_tensor(metric, v).C
    np.testing.assert_allclose(np.einsum("ijk,k->ij", C, v.y), 0.0, atol=1e-12)


def test_custom_lagrangian():
    metric = MetricSpec.custom("y1^2 + 2*y2^2 + x1*y1*y2", dim=2)
    g = MetricManager.fundamental_tensor(metric, vec([0.5, 0.0], [1.0, 1.0])).g
    np.testing.assert_allclose(g, [[1.0, 0.25], [0.25, 2.0]], atol=1e-13)


def test_custom_domain_expression():
    metric = MetricSpec.custom("y1^2 - y2^2", dim=2, domain="y1 - y2")
    assert MetricManager.in_domain(metric, vec([0, 0], [1.0, 0.2]))
    assert not MetricManager.in_domain(metric, vec([0, 0], [0.2, 1.0]))


def test_degenerate_tensor():
    metric = MetricSpec.custom("y1^2", dim=2)
    with pytest.raises(NondegeneracyError):
        MetricManager.fundamental_tensor(metric, vec([0, 0], [1.0, 0.0]))


def test_from_table():
    metric = MetricSpec.from_table({"family": "riemannian", "h": [[1, 0], [0, "x1^2 + 1"]]})
    assert metric.dim == 2
    assert metric.describe()["family"] == "riemannian"
    with pytest.raises(ValueError):
        MetricSpec.from_table({"dim": 2})
    with pytest.raises(ValueError):
        MetricSpec.from_table({"family": "lorentz", "dim": 2})


def test_fundamental_batch_matches_pointwise(sphere):
    x = np.array([[1.0, 0.0], [0.7, 0.3]])
    y = np.array([[0.1, 1.0], [1.0, -0.4]])
    batch = MetricManager.fundamental_batch(sphere, x, y)
    for p in range(2):
        single = MetricManager.fundamental_tensor(sphere, vec(x[p], y[p])).g
        np.testing.assert_allclose(batch[p], single, atol=1e-13)


@pytest.mark.parametrize("family", ["riemannian", "randers"])
def test_identity_checks_on_random_metrics(family):
    checks = MetricManager.get_checks()
    for draw in range(3):
        rng = np.random.default_rng([7, draw])
        metric = ScenarioManager.random_metric(rng, dim=2 + draw % 2, family=family)
        for check in checks:
            assert check(metric, rng) <= check.tolerance, check.name
