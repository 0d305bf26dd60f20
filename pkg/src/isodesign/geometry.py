"""Metric fields and their intrinsic geometry.

Index layout used throughout (a trailing batch of points is allowed in front
of every array):

* ``dg[..., i, j, k]``          = d_k G_ij
* ``d2g[..., i, j, k, l]``      = d_k d_l G_ij
* ``gamma1[..., m, k, l]``      = Gamma_{mkl}   (first kind)
* ``gamma2[..., i, k, l]``      = Gamma^i_{kl}  (second kind)
* ``d_gamma2[..., i, k, l, r]`` = d_r Gamma^i_{kl}
* ``riemann[..., m, i, j, k]``  = R^m_{ijk} = d_k Gamma^m_{ij} - d_j Gamma^m_{ik}
  + Gamma^m_{kp} Gamma^p_{ij} - Gamma^m_{jp} Gamma^p_{ik}
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import expr as ex
from .errors import NotSPD, ValidationError
from .expr import Expression, Jet2
from .matrices import denman_beavers, jet_matrix_arrays, sqrt_jet_2x2

EPS_SPD = 1e-10
H_FD = 1e-5
TOL_CURV = 1e-7


@dataclass(frozen=True)
class MetricField:
    """Symmetric matrix of expressions; only the lower triangle is stored."""

    dim: int
    lower: tuple[tuple[Expression, ...], ...]  # lower[i][j] for j <= i

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValidationError(f"metric dimension must be 2 or 3, got {self.dim}")
        if len(self.lower) != self.dim or any(len(row) != i + 1 for i, row in enumerate(self.lower)):
            raise ValidationError("lower-triangular storage has the wrong shape")

    def entry(self, i: int, j: int) -> Expression:
        """0-based entry ``G_ij``."""
        return self.lower[i][j] if j <= i else self.lower[j][i]

    @classmethod
    def from_entries(cls, entries: Mapping[str, str] | Sequence[Sequence[str]], dim: int) -> "MetricField":
        """Build from ``{'g11': '...', 'g12': '...', ...}`` or a nested list of sources.

        Missing off-diagonal keys default to ``0``; ``gji`` is accepted for ``gij``.
        """
        lower = []
        for i in range(dim):
            row = []
            for j in range(i + 1):
                if isinstance(entries, Mapping):
                    src = entries.get(f"g{i + 1}{j + 1}", entries.get(f"g{j + 1}{i + 1}"))
                    if src is None:
                        if i == j:
                            raise ValidationError(f"missing diagonal entry g{i + 1}{i + 1}")
                        src = "0"
                else:
                    src = entries[i][j]
                row.append(ex.parse(str(src), dim))
            lower.append(tuple(row))
        return cls(dim, tuple(lower))

    @classmethod
    def from_expressions(cls, matrix: Sequence[Sequence[Expression]]) -> "MetricField":
        n = len(matrix)
        return cls(n, tuple(tuple(matrix[i][j] for j in range(i + 1)) for i in range(n)))

    @classmethod
    def identity(cls, dim: int) -> "MetricField":
        return cls.from_expressions([[ex.Const(1.0 if i == j else 0.0) for j in range(dim)] for i in range(dim)])

    @classmethod
    def conformal(cls, factor: Expression | str, dim: int) -> "MetricField":
        """``factor * Id``."""
        if isinstance(factor, str):
            factor = ex.parse(factor, dim)
        return cls.from_expressions([[factor if i == j else ex.Const(0.0) for j in range(dim)] for i in range(dim)])

    def variables(self) -> set[int]:
        out: set[int] = set()
        for row in self.lower:
            for e in row:
                out |= ex.variables(e)
        return out

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.dim
        out = np.empty(x.shape[:-1] + (n, n))
        for i in range(n):
            for j in range(i + 1):
                out[..., i, j] = out[..., j, i] = ex.evaluate(self.lower[i][j], x)
        return out

    def entry_jets(self, x) -> list[list[Jet2]]:
        n = self.dim
        jets = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(i + 1):
                jets[i][j] = jets[j][i] = ex.eval_jet2(self.lower[i][j], x)
        return jets

    def to_strings(self) -> dict[str, str]:
        return {f"g{i + 1}{j + 1}": ex.to_string(self.lower[i][j]) for i in range(self.dim) for j in range(i + 1)}


def pullback_metric(phi: Sequence[Expression], base: MetricField | None = None) -> MetricField:
    """Metric ``(grad phi)^T B (grad phi)`` as exact expressions.

    ``B`` must be constant when given (its entries are evaluated once).
    """
    n = len(phi)
    J = [[ex.diff(phi[s], i + 1) for i in range(n)] for s in range(n)]  # J[s][i] = d_i phi^s
    B = np.eye(n) if base is None else base.values(np.zeros(n))
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            terms = []
            for s in range(n):
                for t in range(n):
                    if B[s, t] != 0.0:
                        terms.append(ex.BinOp("*", ex.Const(B[s, t]), ex.BinOp("*", J[s][i], J[t][j])))
            acc = terms[0] if terms else ex.Const(0.0)
            for term in terms[1:]:
                acc = ex.BinOp("+", acc, term)
            row.append(acc)
        rows.append(row)
    return MetricField.from_expressions(rows)


@dataclass(frozen=True)
class MetricJet:
    x: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    d2g: np.ndarray
    g_inv: np.ndarray
    sqrt_g: np.ndarray
    d_sqrt_g: np.ndarray  # d_sqrt_g[..., i, j, k] = d_k (G^{1/2})_ij
    d2_sqrt_g: np.ndarray | None = None  # exact second derivatives, n = 2 only


def check_spd(g, x, eps: float = EPS_SPD) -> None:
    eig = np.linalg.eigvalsh(g)
    lo = eig[..., 0]
    if np.any(~np.isfinite(lo)) or np.any(lo < eps):
        flat = np.where(np.isfinite(lo), lo, -np.inf).reshape(-1)
        k = int(np.argmin(flat))
        pts = np.asarray(x, dtype=float).reshape(-1, g.shape[-1])
        raise NotSPD(pts[k], float(flat[k]))


def _jet_arrays(jets: list[list[Jet2]]):
    return jet_matrix_arrays(jets)


def metric_jet(M: MetricField, x, h_fd: float = H_FD, check: bool = True) -> MetricJet:
    """Metric value, derivatives up to second order, inverse and square root at ``x``.

    For ``n = 2`` the square root uses the closed form and its derivatives are
    exact; for ``n = 3`` it uses Denman--Beavers and central differences of
    step ``h_fd`` for the first derivative.
    """
    x = np.asarray(x, dtype=float)
    jets = M.entry_jets(x)
    g, dg, d2g = _jet_arrays(jets)
    if check:
        check_spd(g, x)
    g_inv = np.linalg.inv(g)
    if M.dim == 2:
        sq = sqrt_jet_2x2(jets)
        sqrt_g, d_sqrt_g, d2_sqrt_g = _jet_arrays(sq)
    else:
        sqrt_g = denman_beavers(g)
        d_sqrt_g = np.empty(g.shape + (M.dim,))
        for k in range(M.dim):
            e = np.zeros(M.dim)
            e[k] = h_fd
            d_sqrt_g[..., k] = (denman_beavers(M.values(x + e)) - denman_beavers(M.values(x - e))) / (2 * h_fd)
        d2_sqrt_g = None
    return MetricJet(x, g, dg, d2g, g_inv, sqrt_g, d_sqrt_g, d2_sqrt_g)


@dataclass(frozen=True)
class ChristoffelJet:
    gamma2: np.ndarray
    gamma1: np.ndarray
    d_gamma2: np.ndarray
    jet: MetricJet


def christoffel_from_jet(mj: MetricJet) -> ChristoffelJet:
    dg, d2g, ginv = mj.dg, mj.d2g, mj.g_inv
    # Gamma_{mkl} = 1/2 (d_l G_mk + d_k G_ml - d_m G_kl)
    g1 = 0.5 * (dg + np.swapaxes(dg, -1, -2) - np.moveaxis(dg, -1, -3))
    g2 = np.einsum("...im,...mkl->...ikl", ginv, g1)
    # d_r Gamma_{mkl}
    dg1 = 0.5 * (d2g + np.swapaxes(d2g, -2, -3) - np.moveaxis(d2g, -2, -4))
    # d_r G^{-1} = -G^{-1} (d_r G) G^{-1}
    dginv = -np.einsum("...ia,...abr,...bm->...imr", ginv, dg, ginv)
    dg2 = np.einsum("...imr,...mkl->...iklr", dginv, g1) + np.einsum("...im,...mklr->...iklr", ginv, dg1)
    return ChristoffelJet(g2, g1, dg2, mj)


def christoffel(M: MetricField, x) -> ChristoffelJet:
    return christoffel_from_jet(metric_jet(M, x))


def riemann_from_christoffel(cj: ChristoffelJet) -> tuple[np.ndarray, np.ndarray]:
    G2, dG2 = cj.gamma2, cj.d_gamma2
    R = (
        dG2
        - np.swapaxes(dG2, -1, -2)
        + np.einsum("...mkp,...pij->...mijk", G2, G2)
        - np.einsum("...mjp,...pik->...mijk", G2, G2)
    )
    R_low = np.einsum("...am,...mijk->...aijk", cj.jet.g, R)
    return R, R_low


def riemann(M: MetricField, x) -> tuple[np.ndarray, np.ndarray]:
    """Riemann tensor ``R^m_{ijk}`` and its lowered form ``R_{mijk}`` at ``x``."""
    return riemann_from_christoffel(christoffel(M, x))


def ricci(M: MetricField, x) -> np.ndarray:
    """``Ric_{ij} = R^m_{ijm}``; positive on round spheres."""
    R, _ = riemann(M, x)
    return np.einsum("...mijm->...ij", R)


class GaussCurvature(NamedTuple):
    riemann: np.ndarray
    curve_form: np.ndarray

    @property
    def value(self) -> np.ndarray:
        return self.riemann

    @property
    def discrepancy(self) -> np.ndarray:
        return np.abs(self.riemann - self.curve_form)


def _curve_form_curvature(Vv, Vg, Vh) -> np.ndarray:
    """``-(1/det V) curl h_V`` with ``h_V = (1/det V) V curl V`` from jets of ``V``."""
    det = Vv[..., 0, 0] * Vv[..., 1, 1] - Vv[..., 0, 1] * Vv[..., 1, 0]
    ddet = (
        Vg[..., 0, 0, :] * Vv[..., 1, 1, None]
        + Vv[..., 0, 0, None] * Vg[..., 1, 1, :]
        - Vg[..., 0, 1, :] * Vv[..., 1, 0, None]
        - Vv[..., 0, 1, None] * Vg[..., 1, 0, :]
    )
    # curl V = d_1 (V e_2) - d_2 (V e_1)
    c = Vg[..., :, 1, 0] - Vg[..., :, 0, 1]
    dc = Vh[..., :, 1, 0, :] - Vh[..., :, 0, 1, :]  # dc[..., a, r] = d_r c_a
    Vc = np.einsum("...ab,...b->...a", Vv, c)
    dVc = np.einsum("...abr,...b->...ar", Vg, c) + np.einsum("...ab,...br->...ar", Vv, dc)
    # dh[..., a, r] = d_r h_a
    dh = dVc / det[..., None, None] - Vc[..., :, None] * ddet[..., None, :] / det[..., None, None] ** 2
    curl_h = dh[..., 1, 0] - dh[..., 0, 1]
    return -curl_h / det


def gauss_curvature(M: MetricField, x) -> GaussCurvature:
    """Gauss curvature of a planar metric, from the Riemann tensor and from the curve form."""
    if M.dim != 2:
        raise ValidationError("gauss_curvature needs a 2d metric")
    mj = metric_jet(M, x)
    _, R_low = riemann_from_christoffel(christoffel_from_jet(mj))
    det = np.linalg.det(mj.g)
    k_riem = R_low[..., 0, 1, 1, 0] / det
    k_curve = _curve_form_curvature(mj.sqrt_g, mj.d_sqrt_g, mj.d2_sqrt_g)
    return GaussCurvature(k_riem, k_curve)


def _scalar_jet(f: Expression | str, x, dim: int) -> Jet2:
    if isinstance(f, str):
        f = ex.parse(f, dim)
    return ex.eval_jet2(f, x)


def laplace_beltrami(cj: ChristoffelJet, fj: Jet2) -> np.ndarray:
    ginv = cj.jet.g_inv
    return np.einsum("...jk,...jk->...", ginv, fj.hess) - np.einsum("...jk,...ljk,...l->...", ginv, cj.gamma2, fj.grad)


def conformal_ricci_residual(Gt: MetricField, f: Expression | str, x) -> np.ndarray:
    """Ricci tensor of ``e^{2f} Gt`` expressed through ``Gt`` and ``f`` (3d).

    Returns ``Ric(Gt) - (Hess f - df df) - (Lap f + |df|^2) Gt``; it vanishes
    exactly where the conformal metric is Ricci flat.
    """
    if Gt.dim != 3:
        raise ValidationError("conformal_ricci_residual needs a 3d metric")
    cj = christoffel(Gt, x)
    R, _ = riemann_from_christoffel(cj)
    ric = np.einsum("...mijm->...ij", R)
    fj = _scalar_jet(f, x, 3)
    df = fj.grad
    hess_cov = fj.hess - np.einsum("...kij,...k->...ij", cj.gamma2, df)
    lap = laplace_beltrami(cj, fj)
    norm2 = np.einsum("...jk,...j,...k->...", cj.jet.g_inv, df, df)
    outer = df[..., :, None] * df[..., None, :]
    return ric - (hess_cov - outer) - (lap + norm2)[..., None, None] * cj.jet.g


def conformal_gauss_residual(Gt: MetricField, f: Expression | str, x) -> np.ndarray:
    """``kappa(Gt) - Lap_Gt f``; zero iff ``e^{2f} Gt`` is flat at ``x`` (2d)."""
    if Gt.dim != 2:
        raise ValidationError("conformal_gauss_residual needs a 2d metric")
    mj = metric_jet(Gt, x)
    cj = christoffel_from_jet(mj)
    _, R_low = riemann_from_christoffel(cj)
    kappa = R_low[..., 0, 1, 1, 0] / np.linalg.det(mj.g)
    return kappa - laplace_beltrami(cj, _scalar_jet(f, x, 2))
