"""Total differential system for the frame ``w = grad xi`` in any dimension.

Index conventions: ``w[..., s, i] = w^s_i = d_i xi^s``, ``W = w^{-1}``,
``f[..., s, i, j] = f^{s,i}_j`` (the prescribed ``d_j w^s_i``) and
``C[..., s, i, j, k] = C^s_{ijk} = D_k f^{s,i}_j - D_j f^{s,i}_k`` where
``D_k = d_{x_k} + f_k . d_w`` is the total derivative along the system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import expr as ex
from .errors import NonFinite, SingularFrame, ValidationError
from .geometry import MetricField, christoffel, metric_jet
from .grid import GridDomain, GridFunction
from .matrices import perp, sqrtm_spd
from .planar import integrate_frame_field, loop_curl_defect, metric_residual_field

EPS_INV = 1e-8
TOL_INIT = 1e-9
H_W = 1e-6


@dataclass(frozen=True)
class FrameState:
    x: np.ndarray
    w: np.ndarray
    w_inv: np.ndarray

    @classmethod
    def make(cls, x, w, eps_inv: float = EPS_INV) -> "FrameState":
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        det = np.linalg.det(w)
        if np.any(~np.isfinite(det)) or np.any(np.abs(det) < eps_inv):
            k = int(np.argmin(np.where(np.isfinite(det), np.abs(det), -1.0).reshape(-1)))
            pts = x.reshape(-1, x.shape[-1])
            raise SingularFrame(f"|det w| below {eps_inv:g}", pts[min(k, len(pts) - 1)])
        return cls(x, w, np.linalg.inv(w))


@dataclass(frozen=True)
class _Coeffs:
    """Metric data entering ``f``, plus the x-derivatives needed for ``C``."""

    gamma_t: np.ndarray  # Gt Christoffel, [m, i, j]
    d_gamma_t: np.ndarray  # [m, i, j, k]
    g_inv: np.ndarray
    d_g_inv: np.ndarray  # [s, m, k]
    dg: np.ndarray  # [m, p, j] = d_j G_mp
    d2g: np.ndarray  # [m, p, j, k]
    g: np.ndarray
    gt: np.ndarray


def _coeffs(G: MetricField, Gt: MetricField, x) -> _Coeffs:
    if G.dim != Gt.dim:
        raise ValidationError("G and Gt must have the same dimension")
    mj = metric_jet(G, x)
    ct = christoffel(Gt, x)
    d_g_inv = -np.einsum("...sa,...abk,...bm->...smk", mj.g_inv, mj.dg, mj.g_inv)
    return _Coeffs(ct.gamma2, ct.d_gamma2, mj.g_inv, d_g_inv, mj.dg, mj.d2g, mj.g, ct.jet.g)


def _S(w, W, dg):
    """``w^p_i d_j G_mp + w^p_j d_i G_mp - w^p_j w^q_i d_t G_pq W^t_m`` as ``[m, i, j]``."""
    Ta = np.einsum("...pi,...mpj->...mij", w, dg)
    Tc = np.einsum("...pj,...qi,...pqt,...tm->...mij", w, w, dg, W)
    return Ta + np.swapaxes(Ta, -1, -2) - Tc


def _dS(w, W, dg, dw, dW, ddg):
    """Directional derivative of :func:`_S` (any of ``dw``, ``dW``, ``ddg`` may be ``None``)."""
    out = 0.0
    if dw is not None:
        Ta = np.einsum("...pi,...mpj->...mij", dw, dg)
        out = out + Ta + np.swapaxes(Ta, -1, -2)
        out = out - np.einsum("...pj,...qi,...pqt,...tm->...mij", dw, w, dg, W)
        out = out - np.einsum("...pj,...qi,...pqt,...tm->...mij", w, dw, dg, W)
    if dW is not None:
        out = out - np.einsum("...pj,...qi,...pqt,...tm->...mij", w, w, dg, dW)
    if ddg is not None:
        out = out + _S(w, W, ddg)
    return out


def _f(c: _Coeffs, w, W):
    return np.einsum("...sm,...mij->...sij", w, c.gamma_t) - 0.5 * np.einsum(
        "...sm,...mij->...sij", c.g_inv, _S(w, W, c.dg)
    )


def _df_dx(c: _Coeffs, w, W, k: int):
    S = _S(w, W, c.dg)
    dS = _dS(w, W, c.dg, None, None, c.d2g[..., k])
    return (
        np.einsum("...sm,...mij->...sij", w, c.d_gamma_t[..., k])
        - 0.5 * np.einsum("...sm,...mij->...sij", c.d_g_inv[..., k], S)
        - 0.5 * np.einsum("...sm,...mij->...sij", c.g_inv, dS)
    )


def _df_dw(c: _Coeffs, w, W, dw):
    dW = -W @ dw @ W
    dS = _dS(w, W, c.dg, dw, dW, None)
    return np.einsum("...sm,...mij->...sij", dw, c.gamma_t) - 0.5 * np.einsum("...sm,...mij->...sij", c.g_inv, dS)


def rhs_f(G: MetricField, Gt: MetricField, state: FrameState) -> np.ndarray:
    """``f[..., s, i, j]``: the value of ``d_j w^s_i`` prescribed by the system."""
    return _f(_coeffs(G, Gt, state.x), state.w, state.w_inv)


def _residual(c: _Coeffs, w, W, w_derivative: str = "analytic", h_w: float = H_W):
    f = _f(c, w, W)
    n = w.shape[-1]
    D = []
    for k in range(n):
        dw = f[..., k]  # [r, p] direction f^{r,p}_k
        if w_derivative == "analytic":
            dfw = _df_dw(c, w, W, dw)
        elif w_derivative == "fd":
            wp, wm = w + h_w * dw, w - h_w * dw
            dfw = (_f(c, wp, np.linalg.inv(wp)) - _f(c, wm, np.linalg.inv(wm))) / (2 * h_w)
        else:
            raise ValueError(f"unknown w_derivative mode {w_derivative!r}")
        D.append(_df_dx(c, w, W, k) + dfw)  # D_k f[s, i, j]
    Dk = np.stack(D, axis=-1)  # [s, i, j, k] = D_k f^{s,i}_j
    return Dk - np.swapaxes(Dk, -1, -2)


def residual_F(G: MetricField, Gt: MetricField, state: FrameState, w_derivative: str = "analytic") -> np.ndarray:
    """Order-zero compatibility residual ``C[..., s, i, j, k]``, antisymmetric in ``(j, k)``.

    ``w_derivative="fd"`` replaces the closed-form w-derivative by central
    differences of step ``1e-6`` (cross-check mode).
    """
    return _residual(_coeffs(G, Gt, state.x), state.w, state.w_inv, w_derivative)


def algebraic_defect(G: MetricField, Gt: MetricField, x, w) -> np.ndarray:
    """``Gt - w^T G w`` at ``x``."""
    return Gt.values(x) - np.swapaxes(w, -1, -2) @ G.values(x) @ w


def metric_frame(G: MetricField, Gt: MetricField, x) -> np.ndarray:
    """``V^{-1} Vt``, a frame satisfying the algebraic constraint at ``x``."""
    return np.linalg.solve(sqrtm_spd(G.values(x)), sqrtm_spd(Gt.values(x)))


# ---------------------------------------------------------------- Thomas check


@dataclass
class ThomasReport:
    max_norm: float
    witness_x: np.ndarray
    witness_w: np.ndarray
    samples: int
    skipped: int
    tol: float

    @property
    def holds(self) -> bool:
        return self.max_norm <= self.tol

    @property
    def verdict(self) -> str:
        return f"holds (max |F| <= {self.tol:g})" if self.holds else f"fails (|F| = {self.max_norm:.6g} at witness)"


def thomas_check(
    G: MetricField,
    Gt: MetricField,
    domain: GridDomain,
    w_box: float = 0.5,
    samples: int = 256,
    *,
    w0=None,
    seed: int = 0,
    tol: float = 1e-6,
) -> ThomasReport:
    """Largest ``|F|`` over Sobol samples of ``(x, w)``.

    ``x`` ranges over the domain box and ``w = w0 + w_box * U`` with ``U``
    uniform in ``[-1, 1]^{n x n}``; ``w0`` defaults to ``V^{-1} Vt`` at ``x``.
    Samples with ``|det w| < 1e-8`` are skipped and counted.
    """
    if samples < 1:
        raise ValidationError("thomas_check needs at least one sample")
    n = domain.dim
    sob = qmc.Sobol(d=n + n * n, scramble=True, seed=seed)
    u = sob.random_base2(int(np.ceil(np.log2(samples))))[:samples]
    lo, hi = np.asarray(domain.lower), np.asarray(domain.upper)
    x = lo + (hi - lo) * u[:, :n]
    base = metric_frame(G, Gt, x) if w0 is None else np.broadcast_to(np.asarray(w0, float), (samples, n, n))
    w = base + w_box * (2 * u[:, n:].reshape(samples, n, n) - 1)
    ok = np.abs(np.linalg.det(w)) >= EPS_INV
    x, w = x[ok], w[ok]
    if len(x) == 0:
        raise SingularFrame("every sampled frame is singular")
    F = _residual(_coeffs(G, Gt, x), w, np.linalg.inv(w))
    norms = np.sqrt(np.sum(F**2, axis=(-4, -3, -2, -1)))
    k = int(np.argmax(norms))
    return ThomasReport(float(norms[k]), x[k], w[k], int(ok.sum()), int((~ok).sum()), tol)


# ----------------------------------------------------------- frame integration


class _FrameRHS:
    def __init__(self, G, Gt):
        self.G, self.Gt = G, Gt

    def __call__(self, x, w, k):
        W = np.linalg.inv(w)
        return _f(_coeffs(self.G, self.Gt, x), w, W)[..., k]


def _rk4(rhs, x, w, k, h):
    e = np.zeros(x.shape[-1])
    e[k] = h
    k1 = rhs(x, w, k)
    k2 = rhs(x + 0.5 * e, w + 0.5 * h * k1, k)
    k3 = rhs(x + 0.5 * e, w + 0.5 * h * k2, k)
    k4 = rhs(x + e, w + h * k3, k)
    return w + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _guarded_step(rhs, x, w, k, h):
    try:
        out = _rk4(rhs, x, w, k, h)
    except np.linalg.LinAlgError as err:
        raise SingularFrame("singular frame during RK4 step", x.reshape(-1, x.shape[-1])[0]) from err
    det = np.abs(np.linalg.det(out))
    bad = ~np.isfinite(det) | (det < EPS_INV)
    if np.any(bad):
        pts = (x + np.eye(x.shape[-1])[k] * h).reshape(-1, x.shape[-1])
        raise SingularFrame("frame became singular along a lattice path", pts[int(np.argmax(bad.reshape(-1)))])
    return out


@dataclass
class FrameSolution:
    domain: GridDomain
    w: np.ndarray  # nodes + (n, n)
    xi: np.ndarray  # nodes + (n,)
    base_index: tuple[int, ...]
    init_defect: float
    exploratory: bool
    loop_mismatch: float
    algebraic_defect: float
    metric_residual: float
    curl_defect: float
    tol_init: float
    nodal_algebraic: np.ndarray = field(repr=False, default=None)

    @property
    def frame(self) -> GridFunction:
        return GridFunction(self.domain, self.w)


def integrate_frame(
    G: MetricField,
    Gt: MetricField,
    domain: GridDomain,
    x0,
    w0,
    tol_init: float = TOL_INIT,
) -> FrameSolution:
    """Propagate ``w`` from ``w(x0) = w0`` by RK4 along staircase lattice paths.

    Axis 0 is swept through ``x0`` first, then axis 1 from every reached
    node, and so on. An initial frame violating the algebraic constraint by
    more than ``tol_init`` marks the run exploratory instead of aborting.
    """
    n = domain.dim
    if G.dim != n or Gt.dim != n:
        raise ValidationError("metric and grid dimensions differ")
    base = domain.index_of(x0)
    pts = domain.points
    w0 = np.asarray(w0, dtype=float)
    FrameState.make(pts[base], w0)
    init_def = float(np.max(np.abs(algebraic_defect(G, Gt, pts[base], w0))))
    rhs = _FrameRHS(G, Gt)
    w = np.full(domain.shape + (n, n), np.nan)
    w[base] = w0
    for k in range(n):
        h = domain.spacing[k]
        sl = [slice(None)] * n
        for kk in range(k + 1, n):
            sl[kk] = base[kk]
        for direction, rng in ((+1, range(base[k], domain.nodes[k] - 1)), (-1, range(base[k], 0, -1))):
            for i in rng:
                a = tuple(sl[:k] + [i] + sl[k + 1 :])
                b = tuple(sl[:k] + [i + direction] + sl[k + 1 :])
                w[b] = _guarded_step(rhs, pts[a], w[a], k, direction * h)
    if not np.all(np.isfinite(w)):
        raise NonFinite("frame integration left non-finite entries")

    mismatch = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            lo = [slice(None)] * n
            lo[a] = slice(0, -1)
            lo[b] = slice(0, -1)
            lo = tuple(lo)
            xa, wa = pts[lo], w[lo]
            ea = np.eye(n)[a] * domain.spacing[a]
            eb = np.eye(n)[b] * domain.spacing[b]
            p1 = _guarded_step(rhs, xa + ea, _guarded_step(rhs, xa, wa, a, domain.spacing[a]), b, domain.spacing[b])
            p2 = _guarded_step(rhs, xa + eb, _guarded_step(rhs, xa, wa, b, domain.spacing[b]), a, domain.spacing[a])
            mismatch = max(mismatch, float(np.max(np.abs(p1 - p2))))

    nodal_alg = np.max(np.abs(algebraic_defect(G, Gt, pts, w)), axis=(-2, -1))
    f = _f(_coeffs(G, Gt, pts), w, np.linalg.inv(w))
    slopes = np.einsum("...skk->...sk", f)
    xi = integrate_frame_field(domain, w, base, slopes)
    metric_res = float(np.max(metric_residual_field(G, Gt, domain, xi)))
    return FrameSolution(
        domain,
        w,
        xi,
        base,
        init_def,
        init_def > tol_init,
        mismatch,
        float(np.max(nodal_alg)),
        metric_res,
        loop_curl_defect(domain, w, slopes),
        tol_init,
        nodal_alg,
    )


def frame_consistency(G: MetricField, Gt: MetricField, sol: FrameSolution) -> float:
    """Max over interior nodes of ``|d_h,k w_i - f_k(x, w)|`` (central differences)."""
    dom = sol.domain
    f = rhs_f(G, Gt, FrameState.make(dom.points, sol.w))
    worst = 0.0
    inner = tuple(slice(1, -1) for _ in range(dom.dim))
    for k in range(dom.dim):
        dw = dom.derivative(sol.w, k)
        worst = max(worst, float(np.max(np.abs((dw - f[..., k])[inner]))))
    return worst


# --------------------------------------------------------- pointwise algebraic cost


@dataclass
class PointwiseCost:
    K1: float
    K2: float
    A: np.ndarray
    C: np.ndarray
    value: float


def pointwise_cost(G: MetricField, Gt: MetricField, x, w, K1: float = 1.0, K2: float = 1.0) -> PointwiseCost:
    """``K1 |Gt - w^T G w|^2 + K2 |C(w, x)|^2`` at a single point."""
    c = _coeffs(G, Gt, np.asarray(x, dtype=float))
    st = FrameState.make(x, w)
    A = c.gt - st.w.T @ c.g @ st.w
    C = _residual(c, st.w, st.w_inv)
    return PointwiseCost(K1, K2, A, C, float(K1 * np.sum(A**2) + K2 * np.sum(C**2)))


@dataclass
class PointwiseResult:
    w: np.ndarray
    cost: PointwiseCost
    trace: list[float]
    iterations: int
    converged: bool
    message: str


def pointwise_minimize(
    G: MetricField,
    Gt: MetricField,
    x,
    K1: float = 1.0,
    K2: float = 1.0,
    w_start=None,
    *,
    max_iter: int = 500,
    gtol: float = 1e-10,
    h_w: float = H_W,
) -> PointwiseResult:
    """Local minimizer of the pointwise cost by damped Gauss-Newton steps.

    The cost is the squared norm of ``r(w) = (sqrt(K1) A, sqrt(K2) C)``. The
    Jacobian of ``A`` is exact and that of ``C`` uses central differences of
    step ``h_w``. A step is accepted only if it lowers the cost and keeps
    ``|det w| >= 1e-8``; otherwise the damping grows. The cost trace is
    therefore nonincreasing, which is asserted.
    """
    if K1 <= 0 or K2 < 0:
        raise ValidationError("K1 must be positive and K2 nonnegative")
    x = np.asarray(x, dtype=float)
    c = _coeffs(G, Gt, x)
    n = c.g.shape[-1]
    if w_start is None:
        w_start = metric_frame(G, Gt, x)
    w = FrameState.make(x, w_start).w.copy()
    s1, s2 = np.sqrt(K1), np.sqrt(K2)

    def resid(w):
        A = c.gt - w.T @ c.g @ w
        C = _residual(c, w, np.linalg.inv(w)) if K2 > 0 else np.zeros((n,) * 4)
        return np.concatenate([s1 * A.ravel(), s2 * C.ravel()])

    def jac(w):
        cols = []
        for idx in range(n * n):
            E = np.zeros(n * n)
            E[idx] = 1.0
            E = E.reshape(n, n)
            dA = -(E.T @ c.g @ w + w.T @ c.g @ E)
            if K2 > 0:
                Cp = _residual(c, w + h_w * E, np.linalg.inv(w + h_w * E))
                Cm = _residual(c, w - h_w * E, np.linalg.inv(w - h_w * E))
                dC = (Cp - Cm) / (2 * h_w)
            else:
                dC = np.zeros((n,) * 4)
            cols.append(np.concatenate([s1 * dA.ravel(), s2 * dC.ravel()]))
        return np.stack(cols, axis=1)

    r = resid(w)
    cost = float(r @ r)
    trace = [cost]
    lam = 1e-3
    converged, message = False, "max_iter reached"
    it = 0
    for it in range(1, max_iter + 1):
        J = jac(w)
        g = 2 * J.T @ r
        if np.linalg.norm(g) <= gtol or cost == 0.0:
            converged, message = True, "gradient tolerance reached"
            it -= 1
            break
        JtJ = J.T @ J
        accepted = False
        while lam < 1e16:
            step = np.linalg.solve(JtJ + lam * np.diag(np.diag(JtJ) + 1e-12), -J.T @ r)
            w_new = w + step.reshape(n, n)
            if np.all(np.isfinite(w_new)) and abs(np.linalg.det(w_new)) >= EPS_INV:
                r_new = resid(w_new)
                c_new = float(r_new @ r_new)
                if np.isfinite(c_new) and c_new < cost:
                    accepted = True
                    break
            lam *= 10.0
        if not accepted:
            message = "no descent step found"
            converged = np.linalg.norm(g) <= 1e3 * gtol or cost <= 1e-20
            it -= 1
            break
        assert c_new <= cost, "pointwise cost trace must be nonincreasing"
        w, r, cost = w_new, r_new, c_new
        trace.append(cost)
        lam = max(lam / 10.0, 1e-12)
    if abs(np.linalg.det(w)) < EPS_INV:
        raise SingularFrame("pointwise iterate approached a singular frame", x)
    return PointwiseResult(w, pointwise_cost(G, Gt, x, w, K1, K2), trace, it, converged, message)


# ----------------------------------------------------- scalar system of two fields


@dataclass
class ScalarCandidate:
    label: str
    w: np.ndarray
    total_residual: float
    solves: bool


@dataclass
class ScalarDemoReport:
    thomas_first: float  # max |curl a + <a, perp b>|
    thomas_second: float  # max |curl b - 2 <c, perp a>|
    thomas_third: float  # max |<c, perp b>|
    candidates: list[ScalarCandidate]
    tol: float

    @property
    def thomas_holds(self) -> bool:
        return max(self.thomas_first, self.thomas_second, self.thomas_third) <= self.tol


def a_from_solution(w: ex.Expression, b: tuple[ex.Expression, ex.Expression]) -> tuple[ex.Expression, ex.Expression]:
    """``a = (grad w - w b) / w^2``, making ``w`` solve ``grad w = w^2 a + w b``."""
    w2 = ex.BinOp("*", w, w)
    return tuple(ex.BinOp("/", ex.BinOp("-", ex.diff(w, i + 1), ex.BinOp("*", w, b[i])), w2) for i in range(2))


def scalar_demo(
    a,
    b,
    c,
    domain: GridDomain,
    candidates: dict[str, ex.Expression] | None = None,
    tol: float = 1e-4,
) -> ScalarDemoReport:
    """Diagnostics for ``grad w = w^2 a + w b + c`` with one unknown ``w`` on a 2d grid.

    Along any solution ``curl(w^2 a + w b + c) = q2 w^2 + q1 w + q0`` with
    ``q2 = curl a + <a, perp b>``, ``q1 = curl b - 2 <c, perp a>`` and
    ``q0 = -<c, perp b>``, so the Thomas condition is ``q2 = q1 = q0 = 0``.
    Where it fails a solution must be a pointwise root of that quadratic.
    Checked candidates: ``zero``, the c-free root ``quadratic root`` =
    ``-curl b / q2``, the real roots ``root +`` / ``root -`` of the full
    quadratic, and any user ``candidates``; each is tested against the
    system with second-order differences. ``tol`` is scaled by ``1 + |rhs|``.
    """
    if domain.dim != 2:
        raise ValidationError("scalar_demo works on 2d grids")
    a = [ex.parse(s, 2) if isinstance(s, str) else s for s in a]
    b = [ex.parse(s, 2) if isinstance(s, str) else s for s in b]
    c = np.asarray(c, dtype=float)
    pts = domain.points
    aj = [ex.eval_jet2(e, pts) for e in a]
    bj = [ex.eval_jet2(e, pts) for e in b]
    av = np.stack([j.value for j in aj], -1)
    bv = np.stack([j.value for j in bj], -1)
    curl_a = aj[1].grad[..., 0] - aj[0].grad[..., 1]
    curl_b = bj[1].grad[..., 0] - bj[0].grad[..., 1]
    q2 = curl_a + np.sum(av * perp(bv), axis=-1)
    q1 = curl_b - 2 * np.sum(c * perp(av), axis=-1)
    q0 = -np.sum(c * perp(bv), axis=-1)

    fields = {"zero": np.zeros(domain.shape)}
    with np.errstate(divide="ignore", invalid="ignore"):
        fields["quadratic root"] = -curl_b / q2
        disc = np.sqrt(q1**2 - 4 * q2 * q0)
        fields["root +"] = (-q1 + disc) / (2 * q2)
        fields["root -"] = (-q1 - disc) / (2 * q2)
    for label, e in (candidates or {}).items():
        fields[label] = ex.evaluate(ex.parse(e, 2) if isinstance(e, str) else e, pts)

    out = []
    for label, wv in fields.items():
        if not np.all(np.isfinite(wv)):
            out.append(ScalarCandidate(label, wv, float("inf"), False))
            continue
        grad = np.stack([domain.derivative(wv, k) for k in range(2)], -1)
        rhs = wv[..., None] ** 2 * av + wv[..., None] * bv + c
        res = np.max(np.abs(grad - rhs) / (1 + np.abs(rhs)))
        out.append(ScalarCandidate(label, wv, float(res), bool(res <= tol)))
    mx = lambda v: float(np.max(np.abs(v)))  # noqa: E731
    return ScalarDemoReport(mx(q2), mx(q1), mx(q0), out, tol)
