"""Chern connection coefficients and hh-curvature of a conic pseudo-Finsler metric.

The coefficient pipeline (formal Christoffel symbols, Cartan tensor with a
raised index, nonlinear connection, Chern coefficients) is written once over
tensors that may be plain arrays or jets. Feeding it jets lifted along one
extra direction yields every derivative the curvature needs.
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from finsler_morse.geometry.checks import IdentityCheck, relative, sample_tangent
from finsler_morse.geometry.jets import Jet, jet_einsum, jet_inverse
from finsler_morse.geometry.metric import (
    MetricManager,
    MetricSpec,
    TangentVectorAtPoint,
)

logger = logging.getLogger(__name__)


def _permute(tensor, axes):
    if isinstance(tensor, Jet):
        return tensor.permute(axes)
    lead = tensor.ndim - len(axes)
    return np.transpose(tensor, list(range(lead)) + [lead + a for a in axes])


def christoffel_pipeline(g_inv, dg, C, y):
    """γ, C^i_jk, N and Γ from g^{-1}, ∂g/∂x, the Cartan tensor and y.

    ``dg[..., s, j, m]`` is ∂g_sj/∂x^m. Inputs may carry leading batch
    dimensions and may be jets; outputs follow the inputs.
    """
    lowered = 0.5 * (dg + _permute(dg, (0, 2, 1)) - _permute(dg, (2, 0, 1)))
    gamma = jet_einsum("...is,...sjk->...ijk", g_inv, lowered)
    cartan_up = jet_einsum("...is,...sjk->...ijk", g_inv, C)

    spray = jet_einsum("...krs,...r->...ks", gamma, y)
    spray = jet_einsum("...ks,...s->...k", spray, y)
    N = jet_einsum("...ijk,...k->...ij", gamma, y) - jet_einsum(
        "...ijk,...k->...ij", cartan_up, spray
    )

    CN = jet_einsum("...abs,...sc->...abc", C, N)
    bracket = CN - _permute(CN, (2, 0, 1)) + _permute(CN, (1, 2, 0))
    Gamma = gamma - jet_einsum("...li,...ijk->...ljk", g_inv, bracket)
    return gamma, cartan_up, N, Gamma


@dataclass(frozen=True)
class ConnectionData:
    base: TangentVectorAtPoint
    gamma: np.ndarray
    cartan_up: np.ndarray
    N: np.ndarray
    Gamma: np.ndarray


@dataclass(frozen=True)
class CurvatureData:
    base: TangentVectorAtPoint
    R: np.ndarray


@dataclass(frozen=True)
class ConnectionBatch:
    """Connection data at P points; arrays carry a leading axis of length P"""

    g: np.ndarray
    g_inv: np.ndarray
    gamma: np.ndarray
    cartan_up: np.ndarray
    N: np.ndarray
    Gamma: np.ndarray


@dataclass(frozen=True)
class CurvatureBatch:
    g: np.ndarray
    N: np.ndarray
    Gamma: np.ndarray
    R: np.ndarray


class ConnectionManager:
    """Handles connection coefficients, curvature and the curvature pairing"""

    @staticmethod
    def connection_batch(metric: MetricSpec, x: np.ndarray, y: np.ndarray) -> ConnectionBatch:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = metric.dim
        fd = MetricManager.fiber_derivatives(metric, x, y)
        g = 0.5 * fd.H
        MetricManager.check_nondegenerate(g[np.argmax(np.linalg.cond(g))])
        g_inv = np.linalg.inv(g)
        gamma, cartan_up, N, Gamma = christoffel_pipeline(
            g_inv, 0.5 * fd.T[..., :n], 0.25 * fd.T[..., n:], y
        )
        return ConnectionBatch(g=g, g_inv=g_inv, gamma=gamma, cartan_up=cartan_up, N=N, Gamma=Gamma)

    @staticmethod
    def connection_data(metric: MetricSpec, v: TangentVectorAtPoint) -> ConnectionData:
        MetricManager.require_domain(metric, v)
        batch = ConnectionManager.connection_batch(metric, v.x, v.y)
        return ConnectionData(
            base=v,
            gamma=batch.gamma[0],
            cartan_up=batch.cartan_up[0],
            N=batch.N[0],
            Gamma=batch.Gamma[0],
        )

    @staticmethod
    def curvature_batch(metric: MetricSpec, x: np.ndarray, y: np.ndarray) -> CurvatureBatch:
        """hh-curvature R[p, i, j, k, l] = R^i_jkl at a batch of points.

        The pipeline runs on jets carrying one generator per direction
        ∂/∂z_b, z = (x, y), batched over b; the horizontal derivative
        δ_k = ∂_{x^k} − N^r_k ∂_{y^r} is then assembled from the coefficients.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = metric.dim
        points = x.shape[0]
        fd = MetricManager.fiber_derivatives(metric, x, y, lift=True)
        H, T, Q = fd.H, fd.T, fd.Q

        def lifted(value, derivative):
            value = np.broadcast_to(value[:, None], derivative.shape)
            return Jet(np.stack([value, derivative]))

        g0 = 0.5 * H
        MetricManager.check_nondegenerate(g0[np.argmax(np.linalg.cond(g0))])
        g = lifted(g0, 0.5 * np.moveaxis(T, -1, 1))
        dg = lifted(0.5 * T[..., :n], 0.5 * np.moveaxis(Q[..., :n, :], -1, 1))
        C = lifted(0.25 * T[..., n:], 0.25 * np.moveaxis(Q[..., n:, :], -1, 1))
        seeds = np.broadcast_to(np.eye(2 * n)[:, n:], (points, 2 * n, n))
        yj = lifted(y, seeds)

        _, _, N, Gamma = christoffel_pipeline(jet_inverse(g), dg, C, yj)
        N0 = N.value[:, 0]
        Gamma0 = Gamma.value[:, 0]
        dGamma = Gamma.partial(1)

        horizontal = dGamma[:, :n] - np.einsum("prk,prijl->pkijl", N0, dGamma[:, n:])
        A = np.transpose(horizontal, (0, 2, 3, 1, 4))
        products = np.einsum("pihk,phjl->pijkl", Gamma0, Gamma0)
        R = A - np.swapaxes(A, -1, -2) + products - np.swapaxes(products, -1, -2)
        return CurvatureBatch(g=g0, N=N0, Gamma=Gamma0, R=R)

    @staticmethod
    def hh_curvature(metric: MetricSpec, v: TangentVectorAtPoint) -> CurvatureData:
        MetricManager.require_domain(metric, v)
        batch = ConnectionManager.curvature_batch(metric, v.x, v.y)
        return CurvatureData(base=v, R=batch.R[0])

    @staticmethod
    def curvature_operator_batch(metric: MetricSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """F[p, u, w] = g_v(R_v(v, e_u) v, e_w) at a batch of points"""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        batch = ConnectionManager.curvature_batch(metric, x, y)
        F = np.einsum("pam,packl,pc,pk->plm", batch.g, batch.R, y, y)
        return F

    @staticmethod
    def curvature_operator_matrix(metric: MetricSpec, v: TangentVectorAtPoint) -> np.ndarray:
        MetricManager.require_domain(metric, v)
        return ConnectionManager.curvature_operator_batch(metric, v.x, v.y)[0]

    @staticmethod
    def flag_curvature_form(
        metric: MetricSpec, v: TangentVectorAtPoint, u: np.ndarray, w: np.ndarray
    ) -> float:
        """g_v(R_v(v, u) v, w)"""
        F = ConnectionManager.curvature_operator_matrix(metric, v)
        return float(np.asarray(u, float) @ F @ np.asarray(w, float))

    @staticmethod
    def geodesic_acceleration(metric: MetricSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """ÿ from the Euler–Lagrange equation L_yy ÿ = L_x − L_yx y.

        Only second derivatives of L are needed, so this is the cheap spray
        used for plain geodesic integration.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n = metric.dim
        basis = np.eye(2 * n)
        i, a = np.divmod(np.arange(2 * n * n), 2 * n)
        table = MetricManager.lagrangian_partials(
            metric, x[..., None, :], y[..., None, :], [basis[n + i], basis[a]]
        )
        first = table[0b10].reshape(table.shape[1:-1] + (n, 2 * n))[..., 0, :]
        mixed = table[0b11].reshape(table.shape[1:-1] + (n, 2 * n))
        L_x = first[..., :n]
        L_yx = mixed[..., :n]
        H = mixed[..., n:]
        rhs = L_x - np.einsum("...im,...m->...i", L_yx, y)
        return np.linalg.solve(H, rhs[..., None])[..., 0]

    @staticmethod
    def get_checks() -> List[IdentityCheck]:
        """Return the randomized curvature identities"""

        def pairing_symmetry(metric, rng):
            v = sample_tangent(metric, rng)
            F = ConnectionManager.curvature_operator_matrix(metric, v)
            return relative(np.max(np.abs(F - F.T)), np.max(np.abs(F)))

        def skew_pairing(metric, rng):
            v = sample_tangent(metric, rng)
            u, w = rng.normal(size=(2, metric.dim))
            batch = ConnectionManager.curvature_batch(metric, v.x, v.y)
            g, R = batch.g[0], batch.R[0]
            left = np.einsum("am,ackl,c,k,l,m->", g, R, v.y, u, v.y, w)
            right = -np.einsum("am,ackl,c,k,l,m->", g, R, w, u, v.y, v.y)
            return relative(abs(left - right), max(abs(left), abs(right)))

        def nonlinear_contraction(metric, rng):
            v = sample_tangent(metric, rng)
            data = ConnectionManager.connection_data(metric, v)
            contracted = np.einsum("ijk,k->ij", data.Gamma, v.y)
            return relative(np.max(np.abs(contracted - data.N)), np.max(np.abs(data.N)))

        def curvature_antisymmetry(metric, rng):
            v = sample_tangent(metric, rng)
            R = ConnectionManager.hh_curvature(metric, v).R
            return relative(np.max(np.abs(R + np.swapaxes(R, -1, -2))), np.max(np.abs(R)))

        def riemannian_part(metric, rng):
            """The Riemannian metric of the drawn metric's h, a base point and two directions"""
            h = metric.parameters.get("h") or np.eye(metric.dim).tolist()
            riemann = MetricSpec.riemannian(h)
            x = rng.uniform(-0.5, 0.5, size=metric.dim)
            y1, y2 = rng.normal(size=(2, metric.dim))
            return riemann, TangentVectorAtPoint(x, y1), TangentVectorAtPoint(x, y2)

        def riemannian_collapse(metric, rng):
            riemann, v1, v2 = riemannian_part(metric, rng)
            G1 = ConnectionManager.connection_data(riemann, v1).Gamma
            G2 = ConnectionManager.connection_data(riemann, v2).Gamma
            R1 = ConnectionManager.hh_curvature(riemann, v1).R
            R2 = ConnectionManager.hh_curvature(riemann, v2).R
            return max(
                relative(np.max(np.abs(G1 - G2)), np.max(np.abs(G1))),
                relative(np.max(np.abs(R1 - R2)), np.max(np.abs(R1))),
            )

        def levi_civita(metric, rng):
            riemann, v, _ = riemannian_part(metric, rng)
            n, step = metric.dim, 1e-5

            def g_at(x):
                return MetricManager.fundamental_tensor(riemann, TangentVectorAtPoint(x, v.y)).g

            # dg[a, b, m] = ∂_m h_ab by central differences
            dg = np.stack(
                [(g_at(v.x + step * e) - g_at(v.x - step * e)) / (2.0 * step) for e in np.eye(n)], axis=-1
            )
            first_kind = np.einsum("lkj->ljk", dg) + dg - np.einsum("jkl->ljk", dg)
            expected = 0.5 * np.einsum("il,ljk->ijk", np.linalg.inv(g_at(v.x)), first_kind)
            Gamma = ConnectionManager.connection_data(riemann, v).Gamma
            return relative(np.max(np.abs(Gamma - expected)), np.max(np.abs(expected)))

        return [
            IdentityCheck("curvature_pairing_symmetry", 1e-9, pairing_symmetry),
            IdentityCheck("curvature_skew_pairing", 1e-9, skew_pairing),
            IdentityCheck("nonlinear_connection_contraction", 1e-10, nonlinear_contraction),
            IdentityCheck("curvature_antisymmetry", 1e-9, curvature_antisymmetry),
            IdentityCheck("riemannian_collapse", 1e-10, riemannian_collapse),
            IdentityCheck("riemannian_levi_civita", 1e-7, levi_civita),
        ]
