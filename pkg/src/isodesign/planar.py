"""Rotation-angle reduction of the planar problem.

For ``n = 2`` and a target metric of the form ``Gt = e^{2g} Id`` a solution
has ``grad xi = V^{-1} R(theta) Vt`` with ``V = G^{1/2}``, ``Vt = Gt^{1/2}``,
and the angle obeys the total differential equation

    grad theta = m + R(-2 theta) n,

    m = perp(grad g) + A_1 e_2 - A_2 e_1,   n = B_1 e_2 - B_2 e_1,

where ``A_i`` / ``B_i`` are the conformal / anticonformal parts of
``V d_i V^{-1}`` and ``perp(v) = (-v_2, v_1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import NotConformalTarget, StepFailure, ValidationError
from .geometry import MetricField, check_spd
from .grid import GridDomain, GridFunction
from .matrices import (
    anticonformal_part,
    conformal_part,
    inv_jet_2x2,
    jet_matrix_arrays,
    perp,
    rot2,
    sqrt_jet_2x2,
    sqrtm_2x2,
)


def conformal_exponent(Gt: MetricField) -> ex.Expression:
    """``g`` with ``Gt = e^{2g} Id``; raises unless ``Gt`` is syntactically of that form."""
    if Gt.dim != 2:
        raise NotConformalTarget("target metric must be 2d")
    if not ex.is_zero(Gt.entry(1, 0)):
        raise NotConformalTarget("target metric must have an identically zero off-diagonal entry")
    if Gt.entry(0, 0) != Gt.entry(1, 1):
        raise NotConformalTarget("target metric diagonal entries must be identical expressions")
    lam = Gt.entry(0, 0)
    if isinstance(lam, ex.Const):
        if lam.value <= 0:
            raise NotConformalTarget("conformal factor must be positive")
        return ex.Const(0.5 * float(np.log(lam.value)))
    return ex.BinOp("*", ex.Const(0.5), ex.Func("log", lam))


@dataclass(frozen=True)
class MNJet:
    """``m``, ``n`` and their first derivatives; ``dm[..., a, j] = d_j m_a``."""

    m: np.ndarray
    n: np.ndarray
    dm: np.ndarray
    dn: np.ndarray


def mn_jet(G: MetricField, Gt: MetricField, x) -> MNJet:
    if G.dim != 2:
        raise ValidationError("planar reduction needs a 2d metric G")
    g_expr = conformal_exponent(Gt)
    x = np.asarray(x, dtype=float)
    jets = G.entry_jets(x)
    gval, _, _ = jet_matrix_arrays(jets)
    check_spd(gval, x)
    V = sqrt_jet_2x2(jets)
    Vv, Vg, _ = jet_matrix_arrays(V)
    _, Pg, Ph = jet_matrix_arrays(inv_jet_2x2(V))
    # F_i = V d_i V^{-1};  F[..., a, b, i],  dF[..., a, b, i, j] = d_j F_i
    F = np.einsum("...ac,...cbi->...abi", Vv, Pg)
    dF = np.einsum("...acj,...cbi->...abij", Vg, Pg) + np.einsum("...ac,...cbij->...abij", Vv, Ph)
    Fm = np.moveaxis(F, -1, -3)  # [..., i, a, b]
    dFm = np.moveaxis(dF, (-2, -1), (-4, -3))  # [..., i, j, a, b]
    A, B = conformal_part(Fm), anticonformal_part(Fm)
    dA, dB = conformal_part(dFm), anticonformal_part(dFm)
    gj = ex.eval_jet2(g_expr, x)
    m = perp(gj.grad) + A[..., 0, :, 1] - A[..., 1, :, 0]
    n = B[..., 0, :, 1] - B[..., 1, :, 0]
    dperp = np.stack([-gj.hess[..., 1, :], gj.hess[..., 0, :]], axis=-2)  # [..., a, j]
    dm = dperp + np.swapaxes(dA[..., 0, :, :, 1] - dA[..., 1, :, :, 0], -1, -2)
    dn = np.swapaxes(dB[..., 0, :, :, 1] - dB[..., 1, :, :, 0], -1, -2)
    return MNJet(m, n, dm, dn)


def mn_fields(G: MetricField, Gt: MetricField, x) -> tuple[np.ndarray, np.ndarray]:
    """The vector fields ``m`` and ``n`` of the angle equation at ``x``."""
    j = mn_jet(G, Gt, x)
    return j.m, j.n


@dataclass(frozen=True)
class ThomasThetaResiduals:
    raw: np.ndarray  # [..., 3]: (curl m - 2|n|^2, div n - 2<perp n, m>, curl n - 2<n, m>)

    @property
    def normalized_first(self) -> np.ndarray:
        """First residual scaled by ``-2``; for diagonal ``G = diag(e^{2a}, e^{2b})``, ``Gt = Id``
        this is ``Lap(a+b) + |grad(a-b)|^2``."""
        return -2.0 * self.raw[..., 0]

    def max_abs(self) -> np.ndarray:
        return np.max(np.abs(self.raw), axis=-1)


def thomas_theta_residuals(G: MetricField, Gt: MetricField, x) -> ThomasThetaResiduals:
    j = mn_jet(G, Gt, x)
    m, n, dm, dn = j.m, j.n, j.dm, j.dn
    curl_m = dm[..., 1, 0] - dm[..., 0, 1]
    div_n = dn[..., 0, 0] + dn[..., 1, 1]
    curl_n = dn[..., 1, 0] - dn[..., 0, 1]
    n_sq = np.sum(n * n, axis=-1)
    r = np.stack(
        [
            curl_m - 2 * n_sq,
            div_n - 2 * np.sum(perp(n) * m, axis=-1),
            curl_n - 2 * np.sum(n * m, axis=-1),
        ],
        axis=-1,
    )
    return ThomasThetaResiduals(r)


def theta_rhs(m, n, theta) -> np.ndarray:
    """``m + R(-2 theta) n`` (both components)."""
    c, s = np.cos(2 * theta), np.sin(2 * theta)
    return np.stack([m[..., 0] + c * n[..., 0] + s * n[..., 1], m[..., 1] - s * n[..., 0] + c * n[..., 1]], -1)


@dataclass
class ThetaSolution:
    domain: GridDomain
    theta: np.ndarray  # nodes
    base_point: tuple[float, float]
    base_angle: float
    cell_mismatch: np.ndarray  # (N1-1, N2-1) loop defects
    tol_path: float

    @property
    def path_mismatch(self) -> float:
        return float(np.max(np.abs(self.cell_mismatch)))

    @property
    def integrable(self) -> bool:
        return self.path_mismatch <= self.tol_path

    @property
    def grid(self) -> GridFunction:
        return GridFunction(self.domain, self.theta)


class _HalfGrid:
    """``m``, ``n`` sampled on the grid refined by two, so RK4 midpoints are nodes."""

    def __init__(self, G, Gt, domain: GridDomain):
        fine = domain.refine(2)
        m, n = mn_fields(G, Gt, fine.points)
        self.m, self.n = m, n

    def at(self, I, J):
        return self.m[I, J], self.n[I, J]


def _rk4_step(half: _HalfGrid, I, J, theta, axis: int, h: float, sign: int):
    """One RK4 step from fine-grid index ``(I, J)`` to the neighbouring node along ``axis``."""

    def f(I, J, th):
        m, n = half.at(I, J)
        rhs = theta_rhs(m, n, th)[..., axis]
        return rhs

    dI = (sign, 0) if axis == 0 else (0, sign)
    Im, Jm = I + dI[0], J + dI[1]
    Ie, Je = I + 2 * dI[0], J + 2 * dI[1]
    step = sign * h
    k1 = f(I, J, theta)
    k2 = f(Im, Jm, theta + 0.5 * step * k1)
    k3 = f(Im, Jm, theta + 0.5 * step * k2)
    k4 = f(Ie, Je, theta + step * k3)
    out = theta + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise StepFailure("RK4 step produced a non-finite angle")
    return out


def integrate_theta(
    G: MetricField,
    Gt: MetricField,
    domain: GridDomain,
    x0,
    theta0: float,
    tol_path: float | None = None,
) -> ThetaSolution:
    """Propagate the angle from ``theta(x0) = theta0`` along staircase paths.

    The spine runs along ``x1`` through ``x0``; every column is then swept
    along ``x2``. The loop defect of each grid cell (x1-then-x2 versus
    x2-then-x1 from its lower-left corner) certifies local integrability.
    """
    if domain.dim != 2:
        raise ValidationError("integrate_theta needs a 2d grid")
    i0, j0 = domain.index_of(x0)
    h1, h2 = domain.spacing
    N1, N2 = domain.nodes
    half = _HalfGrid(G, Gt, domain)
    theta = np.full(domain.shape, np.nan)
    theta[i0, j0] = theta0
    J0 = np.array(2 * j0)
    for i in range(i0, N1 - 1):
        theta[i + 1, j0] = _rk4_step(half, np.array(2 * i), J0, theta[i, j0], 0, h1, +1)
    for i in range(i0, 0, -1):
        theta[i - 1, j0] = _rk4_step(half, np.array(2 * i), J0, theta[i, j0], 0, h1, -1)
    cols = 2 * np.arange(N1)
    for j in range(j0, N2 - 1):
        theta[:, j + 1] = _rk4_step(half, cols, np.full(N1, 2 * j), theta[:, j], 1, h2, +1)
    for j in range(j0, 0, -1):
        theta[:, j - 1] = _rk4_step(half, cols, np.full(N1, 2 * j), theta[:, j], 1, h2, -1)

    I = 2 * np.arange(N1 - 1)[:, None] * np.ones((1, N2 - 1), dtype=int)
    J = 2 * np.arange(N2 - 1)[None, :] * np.ones((N1 - 1, 1), dtype=int)
    base = theta[:-1, :-1]
    a = _rk4_step(half, I, J, base, 0, h1, +1)
    a = _rk4_step(half, I + 2, J, a, 1, h2, +1)
    b = _rk4_step(half, I, J, base, 1, h2, +1)
    b = _rk4_step(half, I, J + 2, b, 0, h1, +1)
    if tol_path is None:
        tol_path = 1e-5 * domain.diameter
    x0t = tuple(float(v) for v in domain.points[i0, j0])
    return ThetaSolution(domain, theta, x0t, float(theta0), a - b, float(tol_path))


@dataclass
class ReconstructionReport:
    curl_defect: float
    metric_residual: float
    nodal_residual: np.ndarray = field(repr=False)
    tol_curl: float

    @property
    def flagged(self) -> bool:
        return self.curl_defect > self.tol_curl


def frame_from_theta(theta, G: MetricField, Gt: MetricField, points) -> np.ndarray:
    """``w = V^{-1} R(theta) Vt`` at the given points."""
    V = sqrtm_2x2(G.values(points))
    Vt = sqrtm_2x2(Gt.values(points))
    return np.linalg.solve(V, rot2(theta) @ Vt)


def frame_jet_from_theta(theta, G: MetricField, Gt: MetricField, points) -> tuple[np.ndarray, np.ndarray]:
    """``w = V^{-1} R(theta) Vt`` and ``dw[..., s, i, k] = d_k w_si``, with ``grad theta`` from the angle equation."""
    pts = np.asarray(points, dtype=float)
    Pv, Pg, _ = jet_matrix_arrays(inv_jet_2x2(sqrt_jet_2x2(G.entry_jets(pts))))
    Tv, Tg, _ = jet_matrix_arrays(sqrt_jet_2x2(Gt.entry_jets(pts)))
    mn = mn_jet(G, Gt, pts)
    dtheta = theta_rhs(mn.m, mn.n, theta)
    R, dR = rot2(theta), rot2(np.asarray(theta) + 0.5 * np.pi)
    w = Pv @ R @ Tv
    dw = (
        np.einsum("...abk,...bc,...cd->...adk", Pg, R, Tv)
        + np.einsum("...ab,...bc,...cd,...k->...adk", Pv, dR, Tv, dtheta)
        + np.einsum("...ab,...bc,...cdk->...adk", Pv, R, Tg)
    )
    return w, dw


def edge_slopes(dw: np.ndarray) -> np.ndarray:
    """``slopes[..., s, k] = d_k w[..., s, k]`` from a full derivative array."""
    return np.einsum("...skk->...sk", dw)


def integrate_frame_field(domain: GridDomain, w: np.ndarray, base_index, slopes: np.ndarray | None = None) -> np.ndarray:
    """Line integration of ``d_i xi = w[..., :, i]`` along staircase paths.

    The first axis is swept through the base node, then each following axis in
    turn; ``xi`` vanishes at the base node. The trapezoidal rule is used unless
    ``slopes[..., s, k] = d_k w[..., s, k]`` is given, in which case the
    fourth-order Hermite correction ``step^2/12 (g'_a - g'_b)`` is added.
    """
    n = domain.dim
    xi = np.zeros(domain.shape + (w.shape[-2],))
    for k in range(n):
        h = domain.spacing[k]
        col = w[..., :, k]
        sl = [slice(None)] * n
        for kk in range(k + 1, n):
            sl[kk] = base_index[kk]
        start = base_index[k]
        for direction, rng in ((+1, range(start, domain.nodes[k] - 1)), (-1, range(start, 0, -1))):
            step = direction * h
            for i in rng:
                a = tuple(sl[:k] + [i] + sl[k + 1 :])
                b = tuple(sl[:k] + [i + direction] + sl[k + 1 :])
                inc = 0.5 * step * (col[a] + col[b])
                if slopes is not None:
                    inc = inc + step**2 / 12.0 * (slopes[a][..., k] - slopes[b][..., k])
                xi[b] = xi[a] + inc
    return xi


def loop_curl_defect(domain: GridDomain, w: np.ndarray, slopes: np.ndarray | None = None) -> float:
    """Max over cells of |circulation of ``w`` / cell area| in every coordinate plane.

    Edges use the trapezoidal rule, plus the Hermite correction when
    ``slopes[..., s, k] = d_k w[..., s, k]`` is given.
    """
    worst = 0.0
    n = domain.dim
    for a in range(n):
        for b in range(a + 1, n):
            ha, hb = domain.spacing[a], domain.spacing[b]

            def shift(arr, da, db):
                idx = [slice(None)] * n
                idx[a] = slice(da, arr.shape[a] - 1 + da)
                idx[b] = slice(db, arr.shape[b] - 1 + db)
                return arr[tuple(idx)]

            def edge(g, h, p0, p1, dg=None):
                val = 0.5 * h * (shift(g, *p0) + shift(g, *p1))
                if dg is not None:
                    val = val + h * h / 12.0 * (shift(dg, *p0) - shift(dg, *p1))
                return val

            wa, wb = w[..., :, a], w[..., :, b]
            sa = sb = None
            if slopes is not None:
                sa, sb = slopes[..., :, a], slopes[..., :, b]
            circ = (
                edge(wa, ha, (0, 0), (1, 0), sa)
                + edge(wb, hb, (1, 0), (1, 1), sb)
                - edge(wa, ha, (0, 1), (1, 1), sa)
                - edge(wb, hb, (0, 0), (0, 1), sb)
            )
            worst = max(worst, float(np.max(np.abs(circ))) / (ha * hb))
    return worst


def metric_residual_field(G: MetricField, Gt: MetricField, domain: GridDomain, xi: np.ndarray) -> np.ndarray:
    """Nodewise max-abs entry of ``(grad_h xi)^T G grad_h xi - Gt`` with fourth-order differences."""
    pts = domain.points
    J = domain.gradient(xi, order=4)
    res = np.swapaxes(J, -1, -2) @ G.values(pts) @ J - Gt.values(pts)
    return np.max(np.abs(res), axis=(-2, -1))


def reconstruct_xi(
    sol: ThetaSolution, G: MetricField, Gt: MetricField, tol_curl: float = 1e-6
) -> tuple[GridFunction, ReconstructionReport]:
    """Integrate ``w = V^{-1} R(theta) Vt`` to ``xi`` with ``xi(x0) = 0`` and report defects."""
    dom = sol.domain
    w, dw = frame_jet_from_theta(sol.theta, G, Gt, dom.points)
    slopes = edge_slopes(dw)
    base = dom.index_of(sol.base_point)
    xi = integrate_frame_field(dom, w, base, slopes)
    nodal = metric_residual_field(G, Gt, dom, xi)
    report = ReconstructionReport(loop_curl_defect(dom, w, slopes), float(np.max(nodal)), nodal, tol_curl)
    return GridFunction(dom, xi), report
