import numpy as np
import pytest

from finsler_morse.errors import JetCapacityError, JetDomainError, UnknownGeneratorError
from finsler_morse.geometry.jets import (
    Jet,
    extract_partial,
    jet_einsum,
    jet_inverse,
    jet_stack,
    seed,
    seed_directions,
)


def test_product_partials():
    x, y = seed([2.0, 3.0], [(0, 0), (1, 1)])
    f = x * y
    assert extract_partial(f) == pytest.approx(6.0)
    assert extract_partial(f, [0]) == pytest.approx(3.0)
    assert extract_partial(f, [1]) == pytest.approx(2.0)
    assert extract_partial(f, [0, 1]) == pytest.approx(1.0)


def test_euclidean_lagrangian_second_partials():
    for i in range(3):
        for j in range(3):
            y = seed([0.3, -1.2, 0.7], [(i, 0), (j, 1)])
            L = sum(c * c for c in y)
            assert extract_partial(L, [0, 1]) == pytest.approx(2.0 if i == j else 0.0)


def test_repeated_generators_give_higher_derivatives():
    (x,) = seed([1.5], [(0, 0), (0, 1), (0, 2)])
    cube = x**3
    assert extract_partial(cube, [0, 1, 2]) == pytest.approx(6.0)
    assert extract_partial(cube, [0, 1]) == pytest.approx(6.0 * 1.5)


def test_elementary_functions():
    a = 0.3
    (x,) = seed([a], [(0, 0), (0, 1)])
    assert extract_partial(x.sin(), [0, 1]) == pytest.approx(-np.sin(a))
    assert extract_partial(x.cos(), [0]) == pytest.approx(-np.sin(a))
    assert extract_partial(x.exp(), [0, 1]) == pytest.approx(np.exp(a))
    assert extract_partial(x.log(), [0, 1]) == pytest.approx(-1.0 / a**2)
    assert extract_partial(x.sqrt(), [0]) == pytest.approx(0.5 / np.sqrt(a))
    assert extract_partial(x**2.5, [0, 1]) == pytest.approx(2.5 * 1.5 * a**0.5)


def test_quotient_rule():
    x, y = seed([2.0, 5.0], [(0, 0), (1, 1)])
    q = x / y
    assert extract_partial(q, [0]) == pytest.approx(1.0 / 5.0)
    assert extract_partial(q, [1]) == pytest.approx(-2.0 / 25.0)
    assert extract_partial(q, [0, 1]) == pytest.approx(-1.0 / 25.0)


def test_domain_errors():
    (x,) = seed([-1.0], [(0, 0)])
    with pytest.raises(JetDomainError):
        x.sqrt()
    with pytest.raises(JetDomainError):
        x.log()
    with pytest.raises(JetDomainError):
        (x + 1.0).reciprocal()


def test_capacity_and_unknown_generators():
    with pytest.raises(JetCapacityError):
        seed([1.0], [(0, 4)])
    with pytest.raises(JetCapacityError):
        Jet(np.zeros(32))
    (x,) = seed([1.0], [(0, 0)])
    with pytest.raises(UnknownGeneratorError):
        extract_partial(x, [2])


def test_seed_directions_batches_points():
    points = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
    x, y = seed_directions(points, [np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    f = x * x * y
    assert f.shape == (3,)
    np.testing.assert_allclose(f.partial(0b01), 2.0 * points[:, 0] * points[:, 1])
    np.testing.assert_allclose(f.partial(0b11), 2.0 * points[:, 0])


def test_matrix_inverse_derivative():
    A = np.array([[2.0, 1.0], [0.5, 3.0]])
    B = np.array([[0.1, -0.2], [0.3, 0.4]])
    jet = Jet(np.stack([A, B]))
    inverse = jet_inverse(jet)
    A_inv = np.linalg.inv(A)
    np.testing.assert_allclose(inverse.value, A_inv)
    np.testing.assert_allclose(inverse.partial(1), -A_inv @ B @ A_inv)


def test_einsum_and_stack():
    (t,) = seed([2.0], [(0, 0)])
    v = jet_stack([t, t * t, 1.0])
    assert v.shape == (3,)
    norm = jet_einsum("i,i->", v, v)
    # |v|² = t² + t⁴ + 1, derivative 2t + 4t³
    assert float(norm.value) == pytest.approx(4.0 + 16.0 + 1.0)
    assert float(norm.partial(1)) == pytest.approx(4.0 + 32.0)
