"""Truncated jets over square-zero generators.

A jet with ``g`` generators stores ``2**g`` coefficients indexed by bitmask:
bit ``k`` of the index is set when generator ``k`` takes part in the term.
Each generator squares to zero, so the coefficient of a bitmask is the mixed
partial derivative along the directions seeded in those generators.

Coefficients carry trailing batch dimensions (``coefficients.shape ==
(2**g, *shape)``), which lets one expression evaluation produce every
seeded configuration and sample point at once.
"""

import math
from functools import lru_cache
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from finsler_morse.errors import (
    JetCapacityError,
    JetDomainError,
    UnknownGeneratorError,
)

MAX_GENERATORS = 4

Scalar = Union[float, np.ndarray, "Jet"]


@lru_cache(maxsize=None)
def _product_table(generators: int) -> Tuple[Tuple[int, np.ndarray, np.ndarray], ...]:
    """(left mask, disjoint right masks, union masks) for the truncated product"""
    size = 1 << generators
    table = []
    for left in range(size):
        right = np.array([r for r in range(size) if left & r == 0], dtype=np.intp)
        table.append((left, right, left | right))
    return tuple(table)


def _pad(coefficients: np.ndarray, size: int) -> np.ndarray:
    if coefficients.shape[0] == size:
        return coefficients
    filler = np.zeros((size - coefficients.shape[0],) + coefficients.shape[1:])
    return np.concatenate([coefficients, filler], axis=0)


def _lift_batch(coefficients: np.ndarray, batch_ndim: int) -> np.ndarray:
    missing = batch_ndim - (coefficients.ndim - 1)
    if missing <= 0:
        return coefficients
    return coefficients.reshape(
        coefficients.shape[:1] + (1,) * missing + coefficients.shape[1:]
    )


def _align(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    size = max(a.shape[0], b.shape[0])
    batch_ndim = max(a.ndim, b.ndim) - 1
    return (
        _lift_batch(_pad(a, size), batch_ndim),
        _lift_batch(_pad(b, size), batch_ndim),
    )


def _multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _align(a, b)
    size = a.shape[0]
    out = np.zeros((size,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
    for left, right, target in _product_table(size.bit_length() - 1):
        out[target] += a[left] * b[right]
    return out


def _binomial(p: float, k: int) -> float:
    numerator = 1.0
    for j in range(k):
        numerator *= p - j
    return numerator / math.factorial(k)


class Jet:
    """Truncated multivariate Taylor number with square-zero generators."""

    __slots__ = ("coefficients",)
    __array_ufunc__ = None

    def __init__(self, coefficients):
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.ndim == 0:
            coefficients = coefficients.reshape(1)
        size = coefficients.shape[0]
        generators = size.bit_length() - 1
        if size != 1 << generators:
            raise JetCapacityError(f"coefficient count {size} is not a power of two")
        if generators > MAX_GENERATORS:
            raise JetCapacityError(
                f"{generators} generators requested, at most {MAX_GENERATORS} supported"
            )
        self.coefficients = coefficients

    @classmethod
    def constant(cls, value, generators: int = 0) -> "Jet":
        value = np.asarray(value, dtype=float)
        coefficients = np.zeros((1 << generators,) + value.shape)
        coefficients[0] = value
        return cls(coefficients)

    @property
    def generators(self) -> int:
        return self.coefficients.shape[0].bit_length() - 1

    @property
    def value(self) -> np.ndarray:
        return self.coefficients[0]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.coefficients.shape[1:]

    def partial(self, mask: int) -> np.ndarray:
        return self.coefficients[mask]

    def __repr__(self) -> str:
        return f"Jet(generators={self.generators}, shape={self.shape})"

    # Batch indexing and reshaping act on the trailing dimensions only

    def __getitem__(self, key) -> "Jet":
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.coefficients[(slice(None),) + key])

    def permute(self, axes: Sequence[int]) -> "Jet":
        """Transpose the last ``len(axes)`` batch dimensions like ``np.transpose``"""
        lead = self.coefficients.ndim - len(axes)
        order = list(range(lead)) + [lead + a for a in axes]
        return Jet(self.coefficients.transpose(order))

    def swap(self, first: int, second: int) -> "Jet":
        return Jet(np.swapaxes(self.coefficients, first, second))

    def sum(self, axis: int) -> "Jet":
        if axis >= 0:
            axis += 1
        return Jet(self.coefficients.sum(axis=axis))

    # Arithmetic

    def _scale(self, factor) -> "Jet":
        factor = np.asarray(factor, dtype=float)
        coefficients = _lift_batch(self.coefficients, factor.ndim)
        return Jet(coefficients * factor)

    def __add__(self, other: Scalar) -> "Jet":
        if isinstance(other, Jet):
            a, b = _align(self.coefficients, other.coefficients)
            return Jet(a + b)
        other = np.asarray(other, dtype=float)
        a, b = _align(self.coefficients, other[None])
        return Jet(a + b)

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        return Jet(-self.coefficients)

    def __pos__(self) -> "Jet":
        return self

    def __sub__(self, other: Scalar) -> "Jet":
        return self + (-other)

    def __rsub__(self, other: Scalar) -> "Jet":
        return (-self) + other

    def __mul__(self, other: Scalar) -> "Jet":
        if isinstance(other, Jet):
            return Jet(_multiply(self.coefficients, other.coefficients))
        return self._scale(other)

    __rmul__ = __mul__

    def __truediv__(self, other: Scalar) -> "Jet":
        if isinstance(other, Jet):
            return self * other.reciprocal()
        other = np.asarray(other, dtype=float)
        if np.any(other == 0.0):
            raise JetDomainError("division by zero")
        return self._scale(1.0 / other)

    def __rtruediv__(self, other: Scalar) -> "Jet":
        return self.reciprocal() * other

    def __pow__(self, exponent: Scalar) -> "Jet":
        if isinstance(exponent, Jet):
            return (exponent * self.log()).exp()
        exponent = float(exponent)
        if exponent.is_integer():
            power = int(exponent)
            if power < 0:
                return self.reciprocal() ** (-power)
            result = Jet.constant(np.ones(self.shape), self.generators)
            base = self
            while power:
                if power & 1:
                    result = result * base
                power >>= 1
                if power:
                    base = base * base
            return result
        value = self.value
        if np.any(value <= 0.0):
            raise JetDomainError("non-integer power of a non-positive value")
        return self._compose(
            [_binomial(exponent, k) * value ** (exponent - k) for k in range(self.generators + 1)]
        )

    def __rpow__(self, base: Scalar) -> "Jet":
        base = np.asarray(base, dtype=float)
        if np.any(base <= 0.0):
            raise JetDomainError("power with a non-positive base")
        return (self * np.log(base)).exp()

    # Elementary functions by Taylor composition around the value part

    def _compose(self, series: List[np.ndarray]) -> "Jet":
        generators = self.generators
        nilpotent = self.coefficients.copy()
        nilpotent[0] = 0.0
        nilpotent = Jet(nilpotent)
        result = Jet.constant(np.broadcast_to(series[0], self.shape), generators)
        power = nilpotent
        for order in range(1, generators + 1):
            result = result + power._scale(series[order])
            if order < generators:
                power = power * nilpotent
        return result

    def reciprocal(self) -> "Jet":
        value = self.value
        if np.any(value == 0.0):
            raise JetDomainError("division by a jet with zero value part")
        return self._compose(
            [(-1.0) ** k / value ** (k + 1) for k in range(self.generators + 1)]
        )

    def sqrt(self) -> "Jet":
        value = self.value
        if np.any(value <= 0.0):
            raise JetDomainError("sqrt of a non-positive value part")
        return self._compose(
            [_binomial(0.5, k) * value ** (0.5 - k) for k in range(self.generators + 1)]
        )

    def exp(self) -> "Jet":
        value = np.exp(self.value)
        return self._compose(
            [value / math.factorial(k) for k in range(self.generators + 1)]
        )

    def log(self) -> "Jet":
        value = self.value
        if np.any(value <= 0.0):
            raise JetDomainError("log of a non-positive value part")
        series = [np.log(value)]
        series += [(-1.0) ** (k + 1) / (k * value**k) for k in range(1, self.generators + 1)]
        return self._compose(series)

    def sin(self) -> "Jet":
        s, c = np.sin(self.value), np.cos(self.value)
        cycle = [s, c, -s, -c]
        return self._compose(
            [cycle[k % 4] / math.factorial(k) for k in range(self.generators + 1)]
        )

    def cos(self) -> "Jet":
        s, c = np.sin(self.value), np.cos(self.value)
        cycle = [c, -s, -c, s]
        return self._compose(
            [cycle[k % 4] / math.factorial(k) for k in range(self.generators + 1)]
        )


def seed(x: Sequence[float], directions: Iterable[Tuple[int, int]]) -> List[Jet]:
    """Lift a real vector to jets, adding one unit term per (coordinate, generator)"""
    x = np.asarray(x, dtype=float)
    directions = list(directions)
    ids = {generator for _, generator in directions}
    if len(ids) > MAX_GENERATORS or any(not 0 <= g < MAX_GENERATORS for g in ids):
        raise JetCapacityError(
            f"generator ids {sorted(ids)} exceed the {MAX_GENERATORS}-generator capacity"
        )
    generators = max(ids) + 1 if ids else 0
    coefficients = np.zeros((len(x), 1 << generators))
    coefficients[:, 0] = x
    for index, generator in directions:
        if not 0 <= index < len(x):
            raise IndexError(f"coordinate index {index} out of range for dimension {len(x)}")
        coefficients[index, 1 << generator] += 1.0
    return [Jet(row) for row in coefficients]


def seed_directions(point: np.ndarray, directions: Sequence[np.ndarray]) -> List[Jet]:
    """Batched seeding: generator k carries the direction field ``directions[k]``.

    ``point`` has shape (..., m) and every direction broadcasts against it; the
    result is one jet per coordinate with the broadcast batch shape.
    """
    if len(directions) > MAX_GENERATORS:
        raise JetCapacityError(
            f"{len(directions)} generators requested, at most {MAX_GENERATORS} supported"
        )
    point = np.asarray(point, dtype=float)
    directions = [np.asarray(d, dtype=float) for d in directions]
    shape = np.broadcast_shapes(point.shape, *(d.shape for d in directions))
    batch, dim = shape[:-1], shape[-1]
    coefficients = np.zeros((dim, 1 << len(directions)) + batch)
    moved = np.moveaxis(np.broadcast_to(point, shape), -1, 0)
    coefficients[:, 0] = moved
    for k, direction in enumerate(directions):
        coefficients[:, 1 << k] = np.moveaxis(np.broadcast_to(direction, shape), -1, 0)
    return [Jet(coefficients[i]) for i in range(dim)]


def extract_partial(jet: Union[Jet, float], generators: Iterable[int] = ()) -> np.ndarray:
    """Coefficient of the generator subset, i.e. the seeded mixed partial"""
    if not isinstance(jet, Jet):
        if list(generators):
            return np.zeros_like(np.asarray(jet, dtype=float))
        return np.asarray(jet, dtype=float)
    mask = 0
    for generator in set(generators):
        if not 0 <= generator < jet.generators:
            raise UnknownGeneratorError(f"generator {generator} is not active on this jet")
        mask |= 1 << generator
    return jet.coefficients[mask]


def as_coefficients(value: Union[Jet, float], generators: int) -> np.ndarray:
    """Coefficient table of a jet or constant, padded to ``generators``"""
    if isinstance(value, Jet):
        return _pad(value.coefficients, 1 << generators)
    return Jet.constant(value, generators).coefficients


def jet_einsum(spec: str, left, right):
    """``np.einsum`` for two operands that may carry generators"""
    if not isinstance(left, Jet) and not isinstance(right, Jet):
        return np.einsum(spec, left, right)
    a = left.coefficients if isinstance(left, Jet) else np.asarray(left, dtype=float)[None]
    b = right.coefficients if isinstance(right, Jet) else np.asarray(right, dtype=float)[None]
    size = max(a.shape[0], b.shape[0])
    a, b = _pad(a, size), _pad(b, size)
    out = None
    for l, rights, targets in _product_table(size.bit_length() - 1):
        for r, t in zip(rights, targets):
            term = np.einsum(spec, a[l], b[r])
            if out is None:
                out = np.zeros((size,) + term.shape)
            out[t] += term
    return Jet(out)


def jet_inverse(matrix):
    """Inverse of a (batched) square matrix, through the Neumann series on jets"""
    if not isinstance(matrix, Jet):
        return np.linalg.inv(matrix)
    inverse = np.linalg.inv(matrix.value)
    if matrix.generators == 0:
        return Jet(inverse[None])
    nilpotent = matrix.coefficients.copy()
    nilpotent[0] = 0.0
    step = -jet_einsum("...ij,...jk->...ik", inverse, Jet(nilpotent))
    result = Jet.constant(inverse, matrix.generators)
    term = result
    for _ in range(matrix.generators):
        term = jet_einsum("...ij,...jk->...ik", step, term)
        result = result + term
    return result


def jet_stack(items: Sequence[Union[Jet, float]], axis: int = -1) -> Jet:
    """Stack jets (or constants) along a new trailing batch axis"""
    generators = max((j.generators for j in items if isinstance(j, Jet)), default=0)
    tables = [as_coefficients(j, generators) for j in items]
    batch_ndim = max(t.ndim for t in tables) - 1
    tables = [_lift_batch(t, batch_ndim) for t in tables]
    shape = np.broadcast_shapes(*(t.shape for t in tables))
    tables = [np.broadcast_to(t, shape) for t in tables]
    if axis >= 0:
        axis += 1
    return Jet(np.stack(tables, axis=axis))


def broadcast_table(coefficients: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Broadcast a coefficient table to the batch ``shape``"""
    coefficients = _lift_batch(np.asarray(coefficients, dtype=float), len(shape))
    return np.broadcast_to(coefficients, coefficients.shape[:1] + tuple(shape))
