"""Thin-film limit: midplate compatibility, Cosserat vector, bending functional
and the recovery-sequence energy ``E^h / h^2``.

Lame convention: the elastic density has Hessian at the identity
``Q3(F) = mu |sym F|^2 + lam (tr F)^2``; with this normalization the reduced
form is ``Q2(F) = mu |F|^2 + lam mu / (lam + mu) (tr F)^2`` (after the
metric transformation).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr as ex
from .errors import DegenerateSurface, ValidationError
from .geometry import MetricField, check_spd
from .grid import GridDomain, GridFunction
from .matrices import sqrtm_spd

_EXPR_TYPES = (str, ex.Const, ex.Var, ex.Neg, ex.BinOp, ex.Pow, ex.Func)
H_B = 1e-5  # step for derivatives of the Cosserat vector in exact mode
GAUSS3 = (np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)]), np.array([5.0, 8.0, 5.0]) / 9.0)


@dataclass(frozen=True)
class LameParams:
    lam: float
    mu: float

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise ValidationError("Lame coefficients must be positive")


def _sym(F):
    return 0.5 * (F + np.swapaxes(F, -1, -2))


def _tr(F):
    return np.trace(F, axis1=-2, axis2=-1)


def q3_form(lame: LameParams, F) -> np.ndarray:
    """``mu |sym F|^2 + lam (tr F)^2``."""
    S = _sym(np.asarray(F, dtype=float))
    return lame.mu * np.sum(S * S, axis=(-2, -1)) + lame.lam * _tr(S) ** 2


def _q3_bilinear(lame: LameParams, X, Y):
    return lame.mu * np.sum(_sym(X) * _sym(Y), axis=(-2, -1)) + lame.lam * _tr(X) * _tr(Y)


def q2_form(lame: LameParams, Gt2, F) -> np.ndarray:
    """Closed-form reduced quadratic form on ``2x2`` arguments (symmetric part only)."""
    Gt2 = np.asarray(Gt2, dtype=float)
    check_spd(Gt2, np.zeros(Gt2.shape[:-2] + (2,)))
    P = np.linalg.inv(sqrtm_spd(Gt2))
    S = P @ _sym(np.asarray(F, dtype=float)) @ P
    k = lame.lam * lame.mu / (lame.lam + lame.mu)
    return lame.mu * np.sum(S * S, axis=(-2, -1)) + k * _tr(S) ** 2


def _embed(F2):
    F2 = np.asarray(F2, dtype=float)
    out = np.zeros(F2.shape[:-2] + (3, 3))
    out[..., :2, :2] = F2
    return out


def q2_min(lame: LameParams, Gt3, F2) -> tuple[np.ndarray, np.ndarray]:
    """``min_c Q3(Gt^{-1/2} (F* + sym(c x e3)) Gt^{-1/2})`` by a 3x3 linear solve.

    ``F*`` is ``F2`` padded with zeros. Returns the minimum and the minimizer ``c``.
    """
    Gt3 = np.asarray(Gt3, dtype=float)
    check_spd(Gt3, np.zeros(Gt3.shape[:-2] + (3,)))
    P = np.linalg.inv(sqrtm_spd(Gt3))
    F0 = P @ _sym(_embed(F2)) @ P
    E = []
    for k in range(3):
        Ek = np.zeros((3, 3))
        Ek[k, 2] += 0.5
        Ek[2, k] += 0.5
        E.append(P @ Ek @ P)
    H = np.stack([np.stack([_q3_bilinear(lame, E[k], E[l]) for l in range(3)], -1) for k in range(3)], -2)
    b = np.stack([_q3_bilinear(lame, F0, E[k]) for k in range(3)], -1)
    c = -np.linalg.solve(H, b[..., None])[..., 0]
    value = _q3_bilinear(lame, F0, F0) + np.sum(b * c, axis=-1)
    return value, c


def elastic_density(lame: LameParams, F) -> np.ndarray:
    """``W(F) = mu/2 |U - I|^2 + lam/2 (tr(U - I))^2`` with ``U = sqrt(F^T F)``.

    Frame invariant, zero on SO(3), and ``D^2 W(Id)(F, F) = Q3(F)``.
    """
    F = np.asarray(F, dtype=float)
    s = np.linalg.svd(F, compute_uv=False)
    return 0.5 * lame.mu * np.sum((s - 1.0) ** 2, axis=-1) + 0.5 * lame.lam * np.sum(s - 1.0, axis=-1) ** 2


def _check_thickness_independent(M: MetricField, name: str):
    if M.dim != 3:
        raise ValidationError(f"{name} must be a 3x3 metric")
    if 3 in M.variables():
        raise ValidationError(f"{name} depends on x3; thickness-independent metrics are required")


class Midplate:
    """Midplate deformation ``y`` on a 2d grid with thickness-independent 3d metrics.

    ``y`` is either three expressions in ``x1, x2`` (exact derivatives) or
    nodal values (second-order differences).
    """

    def __init__(self, domain: GridDomain, y, G: MetricField, Gt: MetricField):
        if domain.dim != 2:
            raise ValidationError("midplate grid must be 2d")
        _check_thickness_independent(G, "G")
        _check_thickness_independent(Gt, "Gt")
        self.domain, self.G, self.Gt = domain, G, Gt
        self._exprs = None
        if isinstance(y, GridFunction):
            y = y.values
        if isinstance(y, (list, tuple)) and len(y) == 3 and all(isinstance(e, _EXPR_TYPES) for e in y):
            exprs = [ex.parse(e, 3) if isinstance(e, str) else e for e in y]
            for e in exprs:
                if 3 in ex.variables(e):
                    raise ValidationError("midplate deformation must not depend on x3")
            self._exprs = exprs
            values = self._y_values(domain.points)
        else:
            values = np.asarray(y, dtype=float)
            if values.shape != domain.shape + (3,):
                raise ValidationError("midplate values must have shape nodes + (3,)")
        if not np.all(np.isfinite(values)):
            raise ValidationError("midplate deformation has non-finite values")
        self.y = GridFunction(domain, values)

    @property
    def exact(self) -> bool:
        return self._exprs is not None

    @staticmethod
    def _lift(xp):
        xp = np.asarray(xp, dtype=float)
        return np.concatenate([xp, np.zeros(xp.shape[:-1] + (1,))], axis=-1)

    def _y_values(self, xp):
        X = self._lift(xp)
        return np.stack([ex.evaluate(e, X) for e in self._exprs], -1)

    def grad_y_at(self, xp) -> np.ndarray:
        """Exact ``[..., s, i] = d_i y^s`` at planar points (expression mode)."""
        X = self._lift(xp)
        return np.stack([ex.eval_jet2(e, X).grad[..., :2] for e in self._exprs], -2)

    def grad_y(self) -> np.ndarray:
        if self.exact:
            return self.grad_y_at(self.domain.points)
        return self.domain.gradient(self.y.values)

    def metrics_at(self, xp):
        X = self._lift(xp)
        return self.G.values(X), self.Gt.values(X)


def compat_matrix(mid: Midplate) -> np.ndarray:
    """``(grad y)^T G grad y - Gt_{2x2}`` at every node."""
    g, gt = mid.metrics_at(mid.domain.points)
    check_spd(g, mid.domain.points)
    J = mid.grad_y()
    return np.swapaxes(J, -1, -2) @ g @ J - gt[..., :2, :2]


def compat_residual(mid: Midplate) -> GridFunction:
    """Nodewise Frobenius norm of :func:`compat_matrix`."""
    return GridFunction(mid.domain, np.sqrt(np.sum(compat_matrix(mid) ** 2, axis=(-2, -1))))


@dataclass
class CosseratReport:
    b: GridFunction
    normal_metric: np.ndarray  # M
    orthogonality: float  # max |<d_i y, G M>|
    unit_defect: float  # max |<M, G M> - 1|
    compat: float  # max compatibility residual


def _cosserat_from(J, g, gt):
    n = np.cross(J[..., :, 0], J[..., :, 1])
    if np.any(np.linalg.norm(n, axis=-1) < 1e-10):
        raise DegenerateSurface("d1 y x d2 y vanishes; the midplate surface is degenerate")
    gt2 = gt[..., :2, :2]
    det_g, det_gt, det_gt2 = np.linalg.det(g), np.linalg.det(gt), np.linalg.det(gt2)
    M = (np.sqrt(det_g) / np.sqrt(det_gt2))[..., None] * np.linalg.solve(g, n[..., None])[..., 0]
    tang = np.einsum("...si,...i->...s", J, np.linalg.solve(gt2, gt[..., :2, 2:3])[..., 0])
    b = tang + (np.sqrt(det_gt) / np.sqrt(det_gt2))[..., None] * M
    return b, M


def cosserat_b(mid: Midplate) -> CosseratReport:
    """Cosserat vector ``b = grad y Gt2^{-1} (Gt13, Gt23) + sqrt(det Gt / det Gt2) M``."""
    pts = mid.domain.points
    g, gt = mid.metrics_at(pts)
    check_spd(g, pts)
    check_spd(gt, pts)
    J = mid.grad_y()
    b, M = _cosserat_from(J, g, gt)
    GM = np.einsum("...ij,...j->...i", g, M)
    orth = float(np.max(np.abs(np.einsum("...si,...s->...i", J, GM))))
    unit = float(np.max(np.abs(np.sum(M * GM, axis=-1) - 1.0)))
    comp = float(np.max(compat_residual(mid).values))
    return CosseratReport(GridFunction(mid.domain, b), M, orth, unit, comp)


def _b_at(mid: Midplate, xp):
    g, gt = mid.metrics_at(xp)
    return _cosserat_from(mid.grad_y_at(xp), g, gt)[0]


def grad_b(mid: Midplate) -> np.ndarray:
    """``[..., s, i] = d_i b^s``: central differences of step ``1e-5`` on the exact ``b``
    in expression mode, grid differences otherwise."""
    if not mid.exact:
        return mid.domain.gradient(cosserat_b(mid).b.values)
    pts = mid.domain.points
    cols = []
    for i in range(2):
        e = np.zeros(2)
        e[i] = H_B
        cols.append((_b_at(mid, pts + e) - _b_at(mid, pts - e)) / (2 * H_B))
    return np.stack(cols, -1)


def bending_strain(mid: Midplate) -> np.ndarray:
    """``(grad y)^T G grad b`` at every node."""
    g, _ = mid.metrics_at(mid.domain.points)
    return np.swapaxes(mid.grad_y(), -1, -2) @ g @ grad_b(mid)


def limit_functional(mid: Midplate, lame: LameParams) -> float:
    """``(1/24) * integral of Q2((grad y)^T G grad b)`` by the trapezoidal rule."""
    _, gt = mid.metrics_at(mid.domain.points)
    q = q2_form(lame, gt[..., :2, :2], bending_strain(mid))
    return mid.domain.integrate(q) / 24.0


def optimal_warp(mid: Midplate, lame: LameParams) -> np.ndarray:
    """``d = G^{-1} Q^{-T} (c - (<d1 b, G b>, <d2 b, G b>, 0))`` with ``Q = [d1 y, d2 y, b]``
    and ``c`` the reduced-form minimizer for the bending strain."""
    pts = mid.domain.points
    g, gt = mid.metrics_at(pts)
    J = mid.grad_y()
    b = cosserat_b(mid).b.values
    db = grad_b(mid)
    _, c = q2_min(lame, gt, np.swapaxes(J, -1, -2) @ g @ db)
    Gb = np.einsum("...ij,...j->...i", g, b)
    rhs = c.copy()
    rhs[..., 0] -= np.sum(db[..., :, 0] * Gb, axis=-1)
    rhs[..., 1] -= np.sum(db[..., :, 1] * Gb, axis=-1)
    Q = np.concatenate([J, b[..., :, None]], axis=-1)
    t = np.linalg.solve(np.swapaxes(Q, -1, -2), rhs[..., None])
    return np.linalg.solve(g, t)[..., 0]


def recovery_energy(mid: Midplate, lame: LameParams, h: float, warp="auto") -> float:
    """``E^h(xi^h) / h^2`` for ``xi^h = y + x3 b + x3^2/2 d`` on ``omega x (-h/2, h/2)``.

    ``warp`` is ``"auto"`` (optimal ``d``), ``"zero"`` or nodal values of ``d``.
    Quadrature: 3-point Gauss in ``x3``, trapezoidal in ``x'``.
    """
    if h <= 0:
        raise ValidationError("thickness h must be positive")
    dom = mid.domain
    pts = dom.points
    g, gt = mid.metrics_at(pts)
    V = sqrtm_spd(g)
    Pt = np.linalg.inv(sqrtm_spd(gt))
    J = mid.grad_y()
    b = cosserat_b(mid).b.values
    db = grad_b(mid)
    if isinstance(warp, str):
        if warp == "auto":
            d = optimal_warp(mid, lame)
        elif warp == "zero":
            d = np.zeros_like(b)
        else:
            raise ValidationError(f"unknown warp mode {warp!r}")
    else:
        d = np.asarray(warp, dtype=float)
    dd = dom.gradient(d)
    nodes, weights = GAUSS3
    total = np.zeros(dom.shape)
    for t, wq in zip(nodes, weights):
        x3 = 0.5 * h * t
        tang = J + x3 * db + 0.5 * x3**2 * dd
        normal = b + x3 * d
        Fx = np.concatenate([tang, normal[..., :, None]], axis=-1)
        total += 0.5 * h * wq * elastic_density(lame, V @ Fx @ Pt)
    return dom.integrate(total) / h**3


@dataclass(frozen=True)
class RecoveryRow:
    h: float
    eh_over_h2: float
    limit: float

    @property
    def ratio(self) -> float:
        return self.eh_over_h2 / self.limit if self.limit != 0 else float("nan")


def recovery_study(mid: Midplate, lame: LameParams, hs: Sequence[float], warp="auto") -> list[RecoveryRow]:
    limit = limit_functional(mid, lame)
    return [RecoveryRow(float(h), recovery_energy(mid, lame, h, warp), limit) for h in hs]
