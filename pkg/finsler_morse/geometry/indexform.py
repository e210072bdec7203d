"""Index forms of a geodesic with endpoint submanifolds.

In parallel-frame coordinates the second variation is

    I(V, V) = ∫₀^τ (|V̇|² − ⟨𝔯_t V, V⟩) dt − 𝔔_P(V(0)) + 𝔔_Q(V(τ))

with V(0) ∈ R^k, and V(τ) = 0 (fixed end) or V(τ) tangent to Q. Three routes
count its negative directions: a piecewise-linear spectral discretization,
the broken-Jacobi reduction on a disconjugate partition, and the endpoint
form A_γ on the P-Jacobi fields.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import eig_banded, eigvals_banded
from scipy.sparse import coo_matrix, diags

from finsler_morse.config import (
    EIG_HEAD,
    EIG_NEG_TOL,
    EIG_NULL_TOL,
    MESH_SIZE,
    MIN_MESH,
    RANK_TOL,
)
from finsler_morse.errors import (
    HypothesisViolationError,
    MeshError,
    PartitionError,
    PreconditionError,
)
from finsler_morse.geometry.jacobi import (
    FocalPoint,
    JacobiManager,
    JacobiSolutionMatrix,
    ReducedJacobiSystem,
)
from finsler_morse.geometry.metric import TangentVectorAtPoint
from finsler_morse.geometry.submanifold import Submanifold, SubmanifoldManager

logger = logging.getLogger(__name__)

GAUSS_POINTS = 3
QUADRATURE_PANELS = 64
QUADRATURE_ORDER = 8
SPAN_TOL = 1e-6
ENDPOINT_FOCAL_TOL = 1e-7
JACOBI_EQUALITY_TOL = 1e-7

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class DiscretizedForm:
    """Piecewise-linear discretization of an index form.

    Node 0 carries the dofs of R^k, interior nodes R^n (R^{n−1} when
    ``normal_only``), the end node the frame coordinates of T_{γ(τ)}Q or
    nothing. ``mass`` is the lumped (diagonal) mass matrix.
    """

    system: ReducedJacobiSystem
    elements: int
    K: object
    mass: np.ndarray
    bases: Tuple[np.ndarray, ...]
    Q: Optional[Submanifold] = None
    end_basis: Optional[np.ndarray] = None
    end_form: Optional[np.ndarray] = None
    normal_only: bool = False

    @property
    def size(self) -> int:
        return self.mass.size

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.system.tau, self.elements + 1)

    def scaled(self):
        """D^{-1/2} K D^{-1/2} as a sparse matrix"""
        scale = diags(1.0 / np.sqrt(self.mass))
        return (scale @ self.K @ scale).tocsr()

    def band(self) -> np.ndarray:
        """Lower band storage of the scaled form for ``eigvals_banded``"""
        S = self.scaled()
        coo = S.tocoo()
        width = int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0
        band = np.zeros((width + 1, self.size))
        for d in range(width + 1):
            diagonal = S.diagonal(-d)
            band[d, : diagonal.size] = diagonal
        return band

    def refined(self, factor: int = 2) -> "DiscretizedForm":
        return _assemble(
            self.system, factor * self.elements, self.Q, self.end_basis, self.end_form, self.normal_only
        )

    def to_fields(self, vector: np.ndarray) -> np.ndarray:
        """Nodal frame-coordinate values (elements + 1, n) of a dof vector"""
        out = np.zeros((self.elements + 1, self.system.dim))
        offset = 0
        for j, basis in enumerate(self.bases):
            width = basis.shape[1]
            out[j] = basis @ vector[offset : offset + width]
            offset += width
        return out


@dataclass(frozen=True)
class IndexResult:
    index: int
    nullity: int
    eigenvalues: Tuple[float, ...] = ()
    dimension: int = 0
    method: str = ""
    refined: Optional[Tuple[int, int]] = None
    asymmetry: float = 0.0

    def counts(self) -> Tuple[int, int]:
        return self.index, self.nullity

    @property
    def stable(self) -> Optional[bool]:
        """Whether the counts survive the next mesh refinement (None if unchecked)"""
        return None if self.refined is None else self.refined == self.counts()


@dataclass(frozen=True, eq=False)
class DescentDirection:
    """X_ε = Z + εφY along γ with its form value"""

    time: float
    epsilon: float
    value: float
    predicted: float
    field: Field
    derivative: Field
    breakpoints: Tuple[float, ...] = ()


@dataclass(frozen=True)
class IndexLemmaReport:
    trials: int
    passed: int
    worst_gap: float
    equality_violations: int
    jacobi_gap: float = 0.0
    jacobi_distance: float = 0.0

    @property
    def jacobi_equality(self) -> bool:
        return self.jacobi_gap <= JACOBI_EQUALITY_TOL and self.jacobi_distance <= 1e-6

    @property
    def ok(self) -> bool:
        return self.passed == self.trials and self.equality_violations == 0 and self.jacobi_equality


def _count(eigenvalues: np.ndarray, neg_tol: float, null_tol: float) -> Tuple[int, int]:
    index = int(np.sum(eigenvalues < -neg_tol))
    nullity = int(np.sum((eigenvalues >= -neg_tol) & (eigenvalues <= null_tol)))
    return index, nullity


def _end_data(system: ReducedJacobiSystem, Q: Submanifold) -> Tuple[np.ndarray, np.ndarray]:
    """Frame coordinates of an orthonormal basis of T_{γ(τ)}Q and 𝔔_Q in that basis"""
    tau = system.tau
    frame = system.frame
    v = TangentVectorAtPoint(frame.position(tau), frame.velocity(tau))
    form, basis = SubmanifoldManager.boundary_form(system.geodesic.metric, Q, v)
    coordinates = np.linalg.solve(frame.frame(tau), basis)
    return coordinates, form


def _assemble(
    system: ReducedJacobiSystem,
    elements: int,
    Q: Optional[Submanifold],
    end_basis: Optional[np.ndarray],
    end_form: Optional[np.ndarray],
    normal_only: bool,
) -> DiscretizedForm:
    n, k = system.dim, system.k
    if elements - 1 < MIN_MESH:
        raise MeshError(f"mesh needs at least {MIN_MESH} interior nodes, got {elements - 1}")
    h = system.tau / elements
    nodes = np.linspace(0.0, system.tau, elements + 1)

    x, w = leggauss(GAUSS_POINTS)
    s, w = 0.5 * (x + 1.0), 0.5 * w
    times = nodes[:-1, None] + h * s[None, :]
    r = system.r(times.reshape(-1)).reshape(elements, GAUSS_POINTS, n, n)
    shape = np.stack([1.0 - s, s])
    potential = h * np.einsum("q,aq,bq,eqij->eabij", w, shape, shape, r)
    gradient = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    local = gradient[None, :, :, None, None] * np.eye(n) - potential

    identity = np.eye(n)
    interior = identity[:, : n - 1] if normal_only else identity
    end = end_basis if end_basis is not None else np.zeros((n, 0))
    bases = [identity[:, :k]] + [interior] * (elements - 1) + [end]
    widths = np.array([b.shape[1] for b in bases])
    offsets = np.concatenate([[0], np.cumsum(widths)])
    size = int(offsets[-1])

    rows, cols, values = [], [], []
    for e in range(elements):
        for a in range(2):
            for b in range(2):
                left, right = bases[e + a], bases[e + b]
                if not left.shape[1] or not right.shape[1]:
                    continue
                block = left.T @ local[e, a, b] @ right
                i, j = np.meshgrid(
                    offsets[e + a] + np.arange(left.shape[1]),
                    offsets[e + b] + np.arange(right.shape[1]),
                    indexing="ij",
                )
                rows.append(i.ravel())
                cols.append(j.ravel())
                values.append(block.ravel())
    if k:
        i, j = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
        rows.append(i.ravel())
        cols.append(j.ravel())
        values.append(-system.Q_form.ravel())
    if end_form is not None and end.shape[1]:
        kq = end.shape[1]
        i, j = np.meshgrid(offsets[-2] + np.arange(kq), offsets[-2] + np.arange(kq), indexing="ij")
        rows.append(i.ravel())
        cols.append(j.ravel())
        values.append(np.asarray(end_form).ravel())

    K = coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsr()
    K = 0.5 * (K + K.T)

    weights = np.full(elements + 1, h)
    weights[[0, -1]] = 0.5 * h
    mass = np.repeat(weights, widths)
    return DiscretizedForm(
        system=system,
        elements=elements,
        K=K,
        mass=mass,
        bases=tuple(bases),
        Q=Q,
        end_basis=end_basis,
        end_form=end_form,
        normal_only=normal_only,
    )


def _head(form: DiscretizedForm, count: int) -> np.ndarray:
    count = min(count, form.size)
    if count == 0:
        return np.zeros(0)
    return eigvals_banded(form.band(), lower=True, select="i", select_range=(0, count - 1))


def _extrapolated(coarse: DiscretizedForm, fine: DiscretizedForm, count: int) -> np.ndarray:
    """Richardson extrapolation (4λ_fine − λ_coarse)/3 of the eigenvalue head"""
    count = min(count, coarse.size, fine.size)
    return (4.0 * _head(fine, count) - _head(coarse, count)) / 3.0


def _velocity_coordinates(frame, t: np.ndarray) -> np.ndarray:
    """Frame coordinates of γ̇(t), one row per time"""
    return np.linalg.solve(frame.frame(t), frame.velocity(t)[..., None])[..., 0]


def _gauss_nodes(breakpoints: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(QUADRATURE_ORDER)
    times, weights = [], []
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        if b <= a:
            continue
        edges = np.linspace(a, b, QUADRATURE_PANELS + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        times.append((mid[:, None] + half[:, None] * x[None, :]).ravel())
        weights.append((half[:, None] * w[None, :]).ravel())
    return np.concatenate(times), np.concatenate(weights)


class IndexFormManager:
    """Handles index form assembly, index counts and their consistency checks"""

    @staticmethod
    def assemble_Pq(system: ReducedJacobiSystem, N: int = MESH_SIZE) -> DiscretizedForm:
        """Form with V(0) ∈ R^k, boundary −𝔔 at 0 and V(τ) = 0, on N interior nodes"""
        return _assemble(system, N + 1, None, None, None, False)

    @staticmethod
    def assemble_PQ(system: ReducedJacobiSystem, Q: Submanifold, N: int = MESH_SIZE) -> DiscretizedForm:
        """Form with V(τ) tangent to Q and the boundary block −g(S̃^Q W, W) at τ"""
        basis, form = _end_data(system, Q)
        return _assemble(system, N + 1, Q, basis, form, False)

    @staticmethod
    def spectral_index(form: DiscretizedForm, check_refinement: bool = True) -> IndexResult:
        """(index, nullity) from the generalized problem K u = λ D u.

        The eigenvalue head is Richardson-extrapolated between the form and
        its 2× refinement; ``stable`` compares the counts against the next
        refinement pair.
        """
        fine = form.refined()
        count = EIG_HEAD
        while True:
            values = _extrapolated(form, fine, count)
            if not values.size or values[-1] > EIG_NULL_TOL or count >= min(form.size, fine.size):
                break
            count *= 2
        index, nullity = _count(values, EIG_NEG_TOL, EIG_NULL_TOL)

        refined = None
        if check_refinement:
            finer = fine.refined()
            check = _extrapolated(fine, finer, max(count, index + nullity + 1))
            refined = _count(check, EIG_NEG_TOL, EIG_NULL_TOL)
            if refined != (index, nullity):
                logger.warning("index counts changed under mesh refinement: %s -> %s", (index, nullity), refined)
        return IndexResult(
            index=index,
            nullity=nullity,
            eigenvalues=tuple(float(v) for v in values[:EIG_HEAD]),
            dimension=form.size,
            method="spectral",
            refined=refined,
        )

    @staticmethod
    def kernel_basis(form: DiscretizedForm, nullity: Optional[int] = None) -> List[np.ndarray]:
        """Nodal frame-coordinate fields spanning the discrete kernel"""
        if nullity is None:
            nullity = IndexFormManager.spectral_index(form, check_refinement=False).nullity
        if nullity == 0:
            return []
        values = _head(form, min(form.size, EIG_HEAD + nullity))
        order = np.argsort(np.abs(values))[:nullity]
        _, vectors = eig_banded(form.band(), lower=True, select="i", select_range=(0, values.size - 1))
        scale = 1.0 / np.sqrt(form.mass)
        return [form.to_fields(scale * vectors[:, i]) for i in sorted(order)]

    @staticmethod
    def assemble_normal(
        system: ReducedJacobiSystem, Q: Optional[Submanifold] = None, N: int = MESH_SIZE
    ) -> DiscretizedForm:
        """The Pq (or PQ) form on fields with vanishing e_n coordinate, i.e. g(V, γ̇) = 0"""
        if not system.frame.aligned or system.L0 <= 0.0:
            raise PreconditionError("normal restriction needs L₀ > 0 and e_n aligned with γ̇")
        if Q is None:
            return _assemble(system, N + 1, None, None, None, True)
        basis, end_form = _end_data(system, Q)
        return _assemble(system, N + 1, Q, basis, end_form, True)

    @staticmethod
    def normal_restricted_index(
        system: ReducedJacobiSystem, Q: Optional[Submanifold] = None, N: int = MESH_SIZE
    ) -> IndexResult:
        form = IndexFormManager.assemble_normal(system, Q, N)
        return replace(IndexFormManager.spectral_index(form), method="normal-restricted")

    @staticmethod
    def kernel_residual(form: DiscretizedForm, restricted: DiscretizedForm) -> float:
        """Largest distance from an unrestricted kernel field to the restricted kernel span"""
        full = IndexFormManager.kernel_basis(form)
        reduced = IndexFormManager.kernel_basis(restricted)
        if len(full) != len(reduced):
            return float("inf")
        if not full:
            return 0.0
        span = np.column_stack([f.ravel() for f in reduced])
        worst = 0.0
        for f in full:
            vector = f.ravel() / np.linalg.norm(f)
            coefficients = np.linalg.lstsq(span, vector, rcond=None)[0]
            worst = max(worst, float(np.linalg.norm(span @ coefficients - vector)))
        return worst

    @staticmethod
    def broken_jacobi_index(
        system: ReducedJacobiSystem,
        partition: Sequence[float],
        basis: Optional[JacobiSolutionMatrix] = None,
    ) -> IndexResult:
        """Index and nullity on broken Jacobi fields over a disconjugate partition.

        Coordinates are the values w_i at the interior nodes; the form is
        Σ_i ⟨v̇(t_i⁻) − v̇(t_i⁺), w_i⟩.
        """
        n = system.dim
        nodes = list(partition)
        m = len(nodes) - 1
        size = n * (m - 1)
        if size == 0:
            return IndexResult(index=0, nullity=0, dimension=0, method="broken-jacobi")
        basis = basis or JacobiManager.p_jacobi_basis(system)

        left = np.zeros((m + 1, n, m + 1, n))
        right = np.zeros((m + 1, n, m + 1, n))
        M, dM = basis.value(nodes[1]), basis.derivative(nodes[1])
        if np.linalg.cond(M) > 1.0 / RANK_TOL:
            raise PartitionError(f"P-Jacobi interpolation is singular at t₁={nodes[1]:.10g}")
        left[1, :, 1, :] = dM @ np.linalg.inv(M)

        for i in range(1, m):
            a, b = nodes[i], nodes[i + 1]
            fundamental = JacobiManager.fundamental_solutions(system, a, b)
            V, W = fundamental.value(b), fundamental.derivative(b)
            Psi, Phi = V[:, :n], V[:, n:]
            dPsi, dPhi = W[:, :n], W[:, n:]
            if np.linalg.cond(Phi) > 1.0 / RANK_TOL:
                raise PartitionError(f"two-point Jacobi interpolation is singular on [{a:.10g}, {b:.10g}]")
            inverse = np.linalg.inv(Phi)
            # c = Φ(b)⁻¹ (w_{i+1} − Ψ(b) w_i)
            right[i, :, i, :] += -inverse @ Psi
            right[i, :, i + 1, :] += inverse
            left[i + 1, :, i, :] += dPsi - dPhi @ inverse @ Psi
            left[i + 1, :, i + 1, :] += dPhi @ inverse

        jump = (left - right)[1:m, :, 1:m, :].reshape(size, size)
        A = jump
        scale = max(1.0, float(np.max(np.abs(A))))
        asymmetry = float(np.max(np.abs(A - A.T))) / scale
        A = 0.5 * (A + A.T)
        values = np.linalg.eigvalsh(A)
        index, nullity = _count(values, EIG_NEG_TOL * scale, EIG_NULL_TOL * scale)
        return IndexResult(
            index=index,
            nullity=nullity,
            eigenvalues=tuple(float(v) for v in values[:EIG_HEAD]),
            dimension=size,
            method="broken-jacobi",
            asymmetry=asymmetry,
        )

    @staticmethod
    def endpoint_form_A(
        system: ReducedJacobiSystem,
        Q: Submanifold,
        basis: Optional[JacobiSolutionMatrix] = None,
    ) -> Tuple[np.ndarray, IndexResult]:
        """A_γ(J₁, J₂) = ⟨DJ₁(τ), J₂(τ)⟩ − g(S̃^Q J₁(τ), J₂(τ)) on P-Jacobi fields
        whose end values form an orthonormal basis of T_{γ(τ)}Q.

        Raises:
            HypothesisViolationError: the end values of P-Jacobi fields do not cover T_{γ(τ)}Q
        """
        coordinates, end_form = _end_data(system, Q)
        basis = basis or JacobiManager.p_jacobi_basis(system)
        tau = system.tau
        M, dM = basis.value(tau), basis.derivative(tau)
        c = np.linalg.lstsq(M, coordinates, rcond=RANK_TOL)[0]
        residual = float(np.max(np.abs(M @ c - coordinates))) if coordinates.size else 0.0
        if residual > SPAN_TOL:
            raise HypothesisViolationError(
                f"P-Jacobi end values do not span the tangent space of Q (residual {residual:.3e})"
            )
        A = (dM @ c).T @ coordinates + end_form
        scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
        asymmetry = float(np.max(np.abs(A - A.T))) / scale if A.size else 0.0
        A = 0.5 * (A + A.T)
        values = np.linalg.eigvalsh(A) if A.size else np.zeros(0)
        index, nullity = _count(values, EIG_NEG_TOL * scale, EIG_NULL_TOL * scale)
        return A, IndexResult(
            index=index,
            nullity=nullity,
            eigenvalues=tuple(float(v) for v in values),
            dimension=A.shape[0],
            method="endpoint-form",
            asymmetry=asymmetry,
        )

    @staticmethod
    def form_pairing(
        system: ReducedJacobiSystem,
        X: Field,
        dX: Field,
        Y: Field,
        dY: Field,
        Q: Optional[Submanifold] = None,
        free_end: bool = False,
        breakpoints: Sequence[float] = (),
    ) -> float:
        """Index form I(X, Y) on explicit frame-coordinate fields by composite Gauss quadrature.

        Fields are vectorized callables t ↦ (m, n). With ``Q`` the end term
        𝔔_Q applies to the orthonormal Q coordinates of X(τ), Y(τ); with
        ``free_end`` no end term applies.
        """
        tau = system.tau
        points = sorted({0.0, tau, *[b for b in breakpoints if 0.0 < b < tau]})
        times, weights = _gauss_nodes(points)
        r = system.r(times)
        x, y = X(times), Y(times)
        integrand = np.einsum("pi,pi->p", dX(times), dY(times)) - np.einsum("pij,pi,pj->p", r, x, y)
        value = float(weights @ integrand)

        k = system.k
        if k:
            x0, y0 = X(np.array([0.0]))[0, :k], Y(np.array([0.0]))[0, :k]
            value -= float(x0 @ system.Q_form @ y0)
        if Q is not None and not free_end:
            coordinates, end_form = _end_data(system, Q)
            xt = coordinates.T @ X(np.array([tau]))[0]
            yt = coordinates.T @ Y(np.array([tau]))[0]
            value += float(xt @ end_form @ yt)
        return value

    @staticmethod
    def form_value(
        system: ReducedJacobiSystem,
        X: Field,
        dX: Field,
        Q: Optional[Submanifold] = None,
        free_end: bool = False,
        breakpoints: Sequence[float] = (),
    ) -> float:
        return IndexFormManager.form_pairing(system, X, dX, X, dX, Q, free_end, breakpoints)

    @staticmethod
    def descent_direction(
        system: ReducedJacobiSystem,
        s: Optional[float] = None,
        focal: Optional[List[FocalPoint]] = None,
    ) -> DescentDirection:
        """X_ε = Z + εφY with negative form value, built at an interior focal instant s.

        Raises:
            PreconditionError: no focal instant strictly inside (0, τ)
        """
        tau = system.tau
        basis = JacobiManager.p_jacobi_basis(system)
        if s is None:
            focal = JacobiManager.focal_points(system, basis) if focal is None else focal
            interior = [p.time for p in focal if p.time < tau - ENDPOINT_FOCAL_TOL]
            if not interior:
                raise PreconditionError("no interior focal point to build a descent direction from")
            s = interior[0]
        if not 0.0 < s < tau:
            raise PreconditionError(f"focal instant {s} is not interior to (0, {tau})")

        M = basis.value(s)
        _, sigma, vt = np.linalg.svd(M)
        c = vt[-1]
        if sigma[-1] > RANK_TOL * sigma[0] * 100.0:
            raise PreconditionError(f"no P-Jacobi field vanishes at s={s:.10g}")
        Y = -basis.derivative(s) @ c
        speed = float(Y @ Y)
        delta = 0.5 * min(s, tau - s)

        def bump(t):
            u = (t - s) / delta
            return np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 3, 0.0)

        def bump_rate(t):
            u = (t - s) / delta
            return np.where(np.abs(u) < 1.0, -6.0 * u * (1.0 - u * u) ** 2 / delta, 0.0)

        def Z(t):
            t = np.atleast_1d(t)
            inside = (t <= s)[:, None]
            return np.where(inside, np.atleast_2d(basis.value(np.minimum(t, s)) @ c), 0.0)

        def dZ(t):
            t = np.atleast_1d(t)
            inside = (t <= s)[:, None]
            return np.where(inside, np.atleast_2d(basis.derivative(np.minimum(t, s)) @ c), 0.0)

        def W(t):
            return np.atleast_1d(bump(t))[:, None] * Y[None, :]

        def dW(t):
            return np.atleast_1d(bump_rate(t))[:, None] * Y[None, :]

        breakpoints = (s - delta, s, s + delta)
        curvature = IndexFormManager.form_value(system, W, dW, breakpoints=breakpoints)
        epsilon = speed / curvature if curvature > 0.0 else 1.0
        predicted = -2.0 * epsilon * speed + epsilon**2 * curvature

        def X(t):
            return Z(t) + epsilon * W(t)

        def dX(t):
            return dZ(t) + epsilon * dW(t)

        value = IndexFormManager.form_value(system, X, dX, breakpoints=breakpoints)
        logger.debug("descent direction at s=%.10g: value %.6e (predicted %.6e)", s, value, predicted)
        return DescentDirection(
            time=float(s),
            epsilon=float(epsilon),
            value=value,
            predicted=float(predicted),
            field=X,
            derivative=dX,
            breakpoints=breakpoints,
        )

    @staticmethod
    def index_lemma_check(
        system: ReducedJacobiSystem,
        trials: int,
        rng: np.random.Generator,
        pieces: int = 8,
        margin: float = 1e-9,
    ) -> IndexLemmaReport:
        """Compare I(Y, Y) ≤ I(X, X) for random piecewise-linear X and the
        P-Jacobi field Y with Y(τ) = X(τ), using the free-end form.

        One extra trial takes X to be a P-Jacobi field integrated on its own;
        then X = Y and the gap vanishes, recorded as ``jacobi_gap`` (relative)
        and ``jacobi_distance``.

        Raises:
            PreconditionError: a P-focal point lies in (0, τ]
        """
        basis = JacobiManager.p_jacobi_basis(system)
        if JacobiManager.focal_points(system, basis):
            raise PreconditionError("index lemma needs a focal-free geodesic segment")
        n, k, tau = system.dim, system.k, system.tau
        nodes = np.linspace(0.0, tau, pieces + 1)
        M_end = basis.value(tau)

        passed = 0
        violations = 0
        worst = np.inf
        for _ in range(trials):
            values = rng.normal(size=(pieces + 1, n))
            values[0, k:] = 0.0
            slopes = np.diff(values, axis=0) / np.diff(nodes)[:, None]

            def X(t, values=values):
                return np.column_stack([np.interp(t, nodes, values[:, i]) for i in range(n)])

            def dX(t, slopes=slopes):
                piece = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, pieces - 1)
                return slopes[piece]

            c = np.linalg.solve(M_end, values[-1])

            def Y(t, c=c):
                return np.atleast_2d(basis.value(np.atleast_1d(t)) @ c)

            def dY(t, c=c):
                return np.atleast_2d(basis.derivative(np.atleast_1d(t)) @ c)

            x_value = IndexFormManager.form_value(system, X, dX, free_end=True, breakpoints=nodes)
            y_value = IndexFormManager.form_value(system, Y, dY, free_end=True, breakpoints=nodes)
            gap = x_value - y_value
            worst = min(worst, gap)
            scale = max(1.0, abs(x_value))
            if gap >= -margin * scale:
                passed += 1
            times = np.linspace(0.0, tau, 257)
            distance = float(np.max(np.abs(X(times) - Y(times))))
            if gap <= margin * scale and distance > 1e-6:
                violations += 1

        start = np.zeros(n)
        start[:k] = rng.normal(size=k)
        rate = rng.normal(size=n)
        rate[:k] = -system.Q_form @ start[:k]
        field = JacobiManager.jacobi_ivp(system, start, rate)
        c = np.linalg.solve(M_end, field.value(tau)[:, 0])

        def J(t):
            return np.atleast_2d(field.value(np.atleast_1d(t))[..., 0])

        def dJ(t):
            return np.atleast_2d(field.derivative(np.atleast_1d(t))[..., 0])

        def Y(t):
            return np.atleast_2d(basis.value(np.atleast_1d(t)) @ c)

        def dY(t):
            return np.atleast_2d(basis.derivative(np.atleast_1d(t)) @ c)

        j_value = IndexFormManager.form_value(system, J, dJ, free_end=True, breakpoints=nodes)
        y_value = IndexFormManager.form_value(system, Y, dY, free_end=True, breakpoints=nodes)
        times = np.linspace(0.0, tau, 257)
        return IndexLemmaReport(
            trials=trials,
            passed=passed,
            worst_gap=float(worst),
            equality_violations=violations,
            jacobi_gap=abs(j_value - y_value) / max(1.0, abs(j_value)),
            jacobi_distance=float(np.max(np.abs(J(times) - Y(times)))),
        )

    @staticmethod
    def cross_orthogonality(system: ReducedJacobiSystem, trials: int, rng: np.random.Generator) -> float:
        """max |I(nor X, tan Y)| over random smooth fields vanishing at τ.

        Y = f·γ̇ is read off through the integrated frame, so frame drift shows.
        """
        n, k, tau = system.dim, system.k, system.tau
        frame = system.frame
        worst = 0.0
        for _ in range(trials):
            a = rng.normal(size=(3, n))
            a[0, k:] = 0.0
            a[:, n - 1] = 0.0
            b = rng.normal(size=3)

            def X(t, a=a):
                t = np.atleast_1d(t)[:, None]
                return (tau - t) * (a[0] + t * a[1] + t * t * a[2])

            def dX(t, a=a):
                t = np.atleast_1d(t)[:, None]
                return -(a[0] + t * a[1] + t * t * a[2]) + (tau - t) * (a[1] + 2.0 * t * a[2])

            def Y(t, b=b):
                t = np.atleast_1d(t)
                return ((tau - t) * t * (b[0] + b[1] * t))[:, None] * _velocity_coordinates(frame, t)

            def dY(t, b=b):
                t = np.atleast_1d(t)
                rate = (tau - 2.0 * t) * (b[0] + b[1] * t) + (tau - t) * t * b[1]
                return rate[:, None] * _velocity_coordinates(frame, t)

            worst = max(worst, abs(IndexFormManager.form_pairing(system, X, dX, Y, dY)))
        return worst
