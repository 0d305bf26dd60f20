"""Discrete incompatibility energy of a deformation and its minimization.

The energy of a grid deformation ``xi`` is the trapezoidal quadrature of
``dist^2(G^{1/2} grad_h xi Gt^{-1/2}, SO(n))`` over the nodes, where
``grad_h`` uses central differences inside and second-order one-sided
differences on the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFinite
from .geometry import MetricField, check_spd
from .grid import DeformationField, GridDomain
from .matrices import dist2_so, nearest_rotation, sqrtm_spd
from .optim import lbfgs


@dataclass(frozen=True)
class NodalMetrics:
    """``V = G^{1/2}`` and ``Vt^{-1} = Gt^{-1/2}`` at every node of a grid."""

    domain: GridDomain
    V: np.ndarray
    Vt_inv: np.ndarray

    @classmethod
    def build(cls, G: MetricField, Gt: MetricField, domain: GridDomain) -> "NodalMetrics":
        pts = domain.points
        g, gt = G.values(pts), Gt.values(pts)
        check_spd(g, pts)
        check_spd(gt, pts)
        return cls(domain, sqrtm_spd(g), np.linalg.inv(sqrtm_spd(gt)))

    def transformed(self, grad_xi) -> np.ndarray:
        return self.V @ grad_xi @ self.Vt_inv


def nodal_dist2(G: MetricField, Gt: MetricField, xi: DeformationField, metrics: NodalMetrics | None = None) -> np.ndarray:
    metrics = metrics or NodalMetrics.build(G, Gt, xi.domain)
    F = metrics.transformed(xi.grad)
    if not np.all(np.isfinite(F)):
        raise NonFinite("transformed gradient has non-finite entries")
    return dist2_so(F)


def incompat_energy(G: MetricField, Gt: MetricField, xi: DeformationField, metrics: NodalMetrics | None = None) -> float:
    """Trapezoidal quadrature of the nodewise squared distance to SO(n)."""
    return xi.domain.integrate(nodal_dist2(G, Gt, xi, metrics))


class EnergyFunctional:
    """Energy and exact gradient of the discrete energy as a function of the nodal values."""

    def __init__(self, G: MetricField, Gt: MetricField, domain: GridDomain):
        self.domain = domain
        self.metrics = NodalMetrics.build(G, Gt, domain)
        self.weights = domain.trapezoid_weights
        self._D = domain.diff_matrices

    def __call__(self, flat: np.ndarray) -> tuple[float, np.ndarray]:
        dom = self.domain
        n = dom.dim
        vals = flat.reshape(dom.size, n)
        # J[p, s, i] = d_i xi^s at node p
        J = np.stack([D @ vals for D in self._D], axis=-1)
        V = self.metrics.V.reshape(-1, n, n)
        Vti = self.metrics.Vt_inv.reshape(-1, n, n)
        F = V @ J @ Vti
        if not np.all(np.isfinite(F)):
            return np.inf, np.full_like(flat, np.nan)
        w = self.weights.reshape(-1)
        energy = float(np.sum(w * dist2_so(F)))
        dF = 2.0 * w[:, None, None] * (F - nearest_rotation(F))
        dJ = np.swapaxes(V, -1, -2) @ dF @ np.swapaxes(Vti, -1, -2)
        grad = sum(D.T @ dJ[:, :, i] for i, D in enumerate(self._D))
        return energy, np.asarray(grad).reshape(-1)


@dataclass
class EnergyMinimization:
    xi: DeformationField
    energy: float
    trace: list[tuple[int, float, float]]
    converged: bool
    message: str

    @property
    def kappa_estimate(self) -> float:
        """Final energy; an upper estimate of the defect on this grid."""
        return self.energy


def affine_initial(G: MetricField, Gt: MetricField, domain: GridDomain) -> DeformationField:
    """Affine map ``x -> w0 (x - c)`` with ``w0 = V^{-1} Vt`` at the domain center ``c``."""
    c = 0.5 * (np.asarray(domain.lower) + np.asarray(domain.upper))
    V = sqrtm_spd(G.values(c))
    Vt = sqrtm_spd(Gt.values(c))
    w0 = np.linalg.solve(V, Vt)
    return DeformationField.affine(domain, w0, -w0 @ c)


def minimize_energy(
    G: MetricField,
    Gt: MetricField,
    xi_init: DeformationField,
    *,
    max_iter: int = 2000,
    gtol: float = 1e-10,
    ftol: float = 0.0,
) -> EnergyMinimization:
    """Minimize the discrete energy from ``xi_init`` by monotone L-BFGS."""
    dom = xi_init.domain
    functional = EnergyFunctional(G, Gt, dom)
    res = lbfgs(functional, xi_init.values.reshape(-1), max_iter=max_iter, gtol=gtol, ftol=ftol)
    xi = DeformationField(dom, res.x.reshape(dom.shape + (dom.dim,)))
    return EnergyMinimization(xi, res.value, res.trace, res.converged, res.message)


@dataclass(frozen=True)
class OrientationReport:
    min_det: float
    argmin: tuple[int, ...]
    nonpositive_nodes: int
    flagged: bool


def orientation_check(xi: DeformationField) -> OrientationReport:
    """Smallest Jacobian determinant over the grid; flags any node with ``det <= 0``."""
    det = np.linalg.det(xi.grad)
    k = np.unravel_index(np.argmin(det), det.shape)
    bad = int(np.count_nonzero(det <= 0))
    return OrientationReport(float(det[k]), tuple(int(i) for i in k), bad, bad > 0)
