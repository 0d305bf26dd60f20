"""Command line entry point: ``isodesign <command> problem.prob [options]``."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import dimred, energy, geometry, planar, tde
from .errors import IsodesignError, NotConformalTarget, ParseError, ValidationError
from .grid import DeformationField
from .problem import ProblemFile, check_thickness_independent, load_problem
from .report import Report, write_csv

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _coords(prob: ProblemFile):
    pts = prob.domain.points
    return [f"x{k + 1}" for k in range(prob.domain.dim)], [pts[..., k] for k in range(prob.domain.dim)]


def _x0(prob: ProblemFile, args):
    if args.x0 is not None:
        x0 = tuple(float(v) for v in args.x0.split(","))
        if len(x0) != prob.domain.dim:
            raise ValidationError(f"--x0 needs {prob.domain.dim} coordinates")
        prob.domain.index_of(x0)
        return x0
    if "x0" in prob.solver:
        return prob.solver["x0"]
    return prob.domain.lower


def _opt(args, name, prob: ProblemFile, key, default):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return prob.get(key, default)


# --------------------------------------------------------------------- commands


def cmd_curvature(prob: ProblemFile, args, rep: Report):
    tol = _opt(args, "tol", prob, "tol", 1e-10)
    pts = prob.domain.points
    names, cols = _coords(prob)
    for label, M in (("G", prob.G), ("Gt", prob.Gt)):
        _, R_low = geometry.riemann(M, pts)
        norm = np.sqrt(np.sum(R_low**2, axis=(-4, -3, -2, -1)))
        rep.add(f"riemann_max_{label}", float(np.max(norm)))
        names.append(f"riemann_{label}")
        cols.append(norm)
        if M.dim == 2:
            k = geometry.gauss_curvature(M, pts)
            rep.add(f"gauss_max_abs_{label}", float(np.max(np.abs(k.value))))
            rep.add(f"gauss_form_discrepancy_{label}", float(np.max(k.discrepancy)))
            names.append(f"kappa_{label}")
            cols.append(k.value)
        rep.verdict(label, "flat" if np.max(norm) <= tol else "curved", tol)
    return names, cols


def cmd_conformal_check(prob: ProblemFile, args, rep: Report):
    tol = _opt(args, "tol", prob, "tol", 1e-7)
    f = args.f or prob.f
    if f is None:
        raise ValidationError("conformal-check needs f (solver.f or --f)", prob.path)
    pts = prob.domain.points
    names, cols = _coords(prob)
    if prob.domain.dim == 3:
        r = geometry.conformal_ricci_residual(prob.Gt, f, pts)
        val = np.sqrt(np.sum(r**2, axis=(-2, -1)))
        rep.add("ricci_residual_max", float(np.max(val)))
        names.append("ricci_residual")
    else:
        val = np.abs(geometry.conformal_gauss_residual(prob.Gt, f, pts))
        rep.add("gauss_residual_max", float(np.max(val)))
        names.append("gauss_residual")
    cols.append(val)
    rep.verdict("conformal", "satisfied" if np.max(val) <= tol else "violated", tol)
    return names, cols


def cmd_thomas2d(prob: ProblemFile, args, rep: Report):
    tol = _opt(args, "tol", prob, "tol", 1e-8)
    if prob.domain.dim != 2:
        raise ValidationError("thomas2d needs dim = 2", prob.path)
    r = planar.thomas_theta_residuals(prob.G, prob.Gt, prob.domain.points)
    mx = r.max_abs()
    failing = int(np.count_nonzero(mx > tol))
    rep.add("residual_max", float(np.max(mx)))
    rep.add("residual_min", float(np.min(mx)))
    for k in range(3):
        rep.add(f"residual{k + 1}_max_abs", float(np.max(np.abs(r.raw[..., k]))))
    rep.add("normalized_first_min", float(np.min(r.normalized_first)))
    rep.add("normalized_first_max", float(np.max(r.normalized_first)))
    rep.add("failing_nodes", failing)
    rep.add("nodes", prob.domain.size)
    if failing == 0:
        text = "Thomas holds"
    elif failing == prob.domain.size:
        text = "Thomas fails (everywhere)"
    else:
        text = "Thomas fails"
    rep.verdict("thomas", text, tol)
    names, cols = _coords(prob)
    return names + ["r1", "r2", "r3", "normalized_first"], cols + [r.raw[..., k] for k in range(3)] + [r.normalized_first]


def cmd_solve_theta(prob: ProblemFile, args, rep: Report):
    if prob.domain.dim != 2:
        raise ValidationError("solve-theta needs dim = 2", prob.path)
    x0 = _x0(prob, args)
    theta0 = _opt(args, "theta0", prob, "theta0", 0.0)
    tol_path = _opt(args, "tol_path", prob, "tol_path", 1e-5 * prob.domain.diameter)
    tol_curl = _opt(args, "tol", prob, "tol", 1e-6)
    sol = planar.integrate_theta(prob.G, prob.Gt, prob.domain, x0, theta0, tol_path)
    xi, rr = planar.reconstruct_xi(sol, prob.G, prob.Gt, tol_curl)
    rep.add("x0", x0)
    rep.add("theta0", theta0)
    rep.add("path_mismatch", sol.path_mismatch)
    rep.add("curl_defect", rr.curl_defect)
    rep.add("metric_residual", rr.metric_residual)
    rep.verdict("integrability", "certified" if sol.integrable else "not certified", tol_path)
    rep.verdict("curl", "flagged" if rr.flagged else "ok", tol_curl)
    names, cols = _coords(prob)
    return names + ["theta", "xi1", "xi2", "residual"], cols + [sol.theta, xi.values[..., 0], xi.values[..., 1], rr.nodal_residual]


def cmd_thomas_nd(prob: ProblemFile, args, rep: Report):
    tol = _opt(args, "tol", prob, "tol", 1e-6)
    samples = _opt(args, "samples", prob, "samples", 256)
    seed = _opt(args, "seed", prob, "seed", 0)
    w_box = _opt(args, "w_box", prob, "w_box", 0.5)
    r = tde.thomas_check(prob.G, prob.Gt, prob.domain, w_box, samples, w0=prob.get("w0"), seed=seed, tol=tol)
    rep.add("samples", r.samples)
    rep.add("skipped_singular", r.skipped)
    rep.add("max_F", r.max_norm)
    rep.add("witness_x", r.witness_x)
    rep.add("witness_w", r.witness_w)
    rep.verdict("thomas", r.verdict, tol)
    return None


def cmd_integrate_frame(prob: ProblemFile, args, rep: Report):
    x0 = _x0(prob, args)
    n = prob.domain.dim
    w0 = prob.get("w0")
    if w0 is None:
        w0 = tde.metric_frame(prob.G, prob.Gt, np.asarray(x0))
    tol_init = _opt(args, "tol_init", prob, "tol_init", tde.TOL_INIT)
    sol = tde.integrate_frame(prob.G, prob.Gt, prob.domain, x0, w0, tol_init)
    rep.add("x0", x0)
    rep.add("w0", w0)
    rep.add("initial_defect", sol.init_defect)
    rep.add("loop_mismatch", sol.loop_mismatch)
    rep.add("algebraic_defect", sol.algebraic_defect)
    rep.add("curl_defect", sol.curl_defect)
    rep.add("metric_residual", sol.metric_residual)
    rep.verdict("run", "exploratory" if sol.exploratory else "initial condition satisfied", tol_init)
    names, cols = _coords(prob)
    for s in range(n):
        for i in range(n):
            names.append(f"w{s + 1}{i + 1}")
            cols.append(sol.w[..., s, i])
    for s in range(n):
        names.append(f"xi{s + 1}")
        cols.append(sol.xi[..., s])
    return names + ["algebraic_defect"], cols + [sol.nodal_algebraic]


def cmd_pointwise(prob: ProblemFile, args, rep: Report):
    K1 = _opt(args, "K1", prob, "k1", 1.0)
    K2 = _opt(args, "K2", prob, "k2", 1.0)
    n = prob.domain.dim
    pts = prob.domain.points.reshape(-1, n)
    w0 = prob.get("w0")

    def run(x):
        return tde.pointwise_minimize(prob.G, prob.Gt, x, K1, K2, w0)

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        results = list(pool.map(run, pts))
    costs = np.array([r.cost.value for r in results])
    W = np.stack([r.w for r in results])
    rep.add("K1", K1)
    rep.add("K2", K2)
    rep.add("points", len(pts))
    rep.add("cost_max", float(costs.max()))
    rep.add("cost_median", float(np.median(costs)))
    rep.add("converged", int(sum(r.converged for r in results)))
    tol = _opt(args, "tol", prob, "tol", 1e-8)
    rep.verdict("pointwise", f"{int(np.count_nonzero(costs <= tol))} of {len(pts)} points reach zero cost", tol)
    rep.notes.append("pointwise zero-cost frames need not integrate to a global solution")
    names = [f"x{k + 1}" for k in range(n)] + ["cost"] + [f"w{s + 1}{i + 1}" for s in range(n) for i in range(n)]
    cols = [pts[:, k] for k in range(n)] + [costs] + [W[:, s, i] for s in range(n) for i in range(n)]
    return names, cols


def cmd_minimize_energy(prob: ProblemFile, args, rep: Report):
    dom = prob.domain
    if args.init == "affine":
        xi0 = energy.affine_initial(prob.G, prob.Gt, dom)
    else:
        xi0 = DeformationField.affine(dom, np.eye(dom.dim))
    max_iter = _opt(args, "max_iter", prob, "max_iter", 2000)
    gtol = _opt(args, "gtol", prob, "gtol", 1e-10)
    ftol = _opt(args, "ftol", prob, "ftol", 0.0)
    e0 = energy.incompat_energy(prob.G, prob.Gt, xi0)
    res = energy.minimize_energy(prob.G, prob.Gt, xi0, max_iter=max_iter, gtol=gtol, ftol=ftol)
    ori = energy.orientation_check(res.xi)
    rep.add("init", args.init)
    rep.add("initial_energy", e0)
    rep.add("final_energy", res.energy)
    rep.add("iterations", len(res.trace) - 1)
    rep.add("message", res.message)
    rep.add("min_det", ori.min_det)
    rep.verdict("orientation", "flagged" if ori.flagged else "preserved", 0.0)
    if args.trace:
        it, val, step = zip(*res.trace)
        rep.csv_paths.append(write_csv(args.trace, ["iteration", "energy", "step"], [np.array(it), np.array(val), np.array(step)]))
    names, cols = _coords(prob)
    for s in range(dom.dim):
        names.append(f"xi{s + 1}")
        cols.append(res.xi.values[..., s])
    return names, cols


def cmd_dimred(prob: ProblemFile, args, rep: Report):
    if prob.domain.dim != 2:
        raise ValidationError("dimred needs a 2d midplate grid (domain.dim = 2)", prob.path)
    if prob.G.dim != 3 or prob.Gt.dim != 3:
        raise ValidationError("dimred needs 3x3 metrics", prob.path)
    check_thickness_independent(prob)
    if prob.midplate is None:
        raise ValidationError("dimred needs a [midplate] section", prob.path)
    lame = dimred.LameParams(*prob.get("lame", (1.0, 1.0)))
    hs = prob.get("h", (1 / 8, 1 / 16, 1 / 32, 1 / 64))
    mid = dimred.Midplate(prob.domain, list(prob.midplate), prob.G, prob.Gt)
    cb = dimred.cosserat_b(mid)
    rows = dimred.recovery_study(mid, lame, hs, warp=args.warp)
    rep.add("lame", (lame.lam, lame.mu))
    rep.add("compat_residual_max", cb.compat)
    rep.add("normal_orthogonality", cb.orthogonality)
    rep.add("normal_unit_defect", cb.unit_defect)
    rep.add("limit", rows[0].limit)
    for r in rows:
        rep.add(f"ratio_h={r.h:.6g}", r.ratio)
    tol = _opt(args, "tol", prob, "tol", 1e-6)
    if cb.compat > tol:
        rep.notes.append("midplate is not compatible with the metrics; the limit functional is not attained")
    rep.verdict("compatibility", "satisfied" if cb.compat <= tol else "violated", tol)
    return ["h", "Eh_over_h2", "limit", "ratio"], [
        np.array([r.h for r in rows]),
        np.array([r.eh_over_h2 for r in rows]),
        np.array([r.limit for r in rows]),
        np.array([r.ratio for r in rows]),
    ]


COMMANDS = {
    "curvature": (cmd_curvature, "Riemann and Gauss curvature of both metrics"),
    "conformal-check": (cmd_conformal_check, "conformal Ricci (3d) or Gauss (2d) condition for f"),
    "thomas2d": (cmd_thomas2d, "Thomas residuals of the planar angle equation"),
    "solve-theta": (cmd_solve_theta, "integrate the angle equation and reconstruct xi"),
    "thomas-nd": (cmd_thomas_nd, "sampled Thomas check of the frame system"),
    "integrate-frame": (cmd_integrate_frame, "integrate the frame system along lattice paths"),
    "pointwise": (cmd_pointwise, "minimize the pointwise algebraic cost at every node"),
    "minimize-energy": (cmd_minimize_energy, "minimize the discrete incompatibility energy"),
    "dimred": (cmd_dimred, "thin-film limit and recovery-sequence energies"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isodesign", description="Diagnose and solve (grad xi)^T G grad xi = Gt.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("problem", help="problem file")
        s.add_argument("--out", help="write the per-node CSV here")
        s.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
        s.add_argument("--tol", type=float, help="verdict tolerance")
        if name in ("solve-theta", "integrate-frame"):
            s.add_argument("--x0", help="base node, comma separated")
        if name == "solve-theta":
            s.add_argument("--theta0", type=float)
            s.add_argument("--tol-path", dest="tol_path", type=float)
        if name == "integrate-frame":
            s.add_argument("--tol-init", dest="tol_init", type=float)
        if name == "thomas-nd":
            s.add_argument("--samples", type=int)
            s.add_argument("--seed", type=int)
            s.add_argument("--w-box", dest="w_box", type=float)
        if name == "pointwise":
            s.add_argument("--K1", type=float)
            s.add_argument("--K2", type=float)
        if name == "minimize-energy":
            s.add_argument("--init", choices=("affine", "identity"), default="affine")
            s.add_argument("--trace", help="write the descent trace CSV here")
            s.add_argument("--max-iter", dest="max_iter", type=int)
            s.add_argument("--gtol", type=float)
            s.add_argument("--ftol", type=float)
        if name == "conformal-check":
            s.add_argument("--f", help="conformal exponent expression")
        if name == "dimred":
            s.add_argument("--warp", choices=("auto", "zero"), default="auto")
    return p


def run(argv=None, out=sys.stdout, err=sys.stderr) -> int:
    args = build_parser().parse_args(argv)
    try:
        prob = load_problem(args.problem)
        rep = Report(args.command, prob.digest)
        result = COMMANDS[args.command][0](prob, args, rep)
        if result is not None and args.out:
            rep.csv_paths.append(write_csv(args.out, *result))
    except (ValidationError, ParseError, NotConformalTarget) as e:
        print(f"error: {e}", file=err)
        return EXIT_VALIDATION
    except IsodesignError as e:
        print(f"numerical failure: {e}", file=err)
        return EXIT_NUMERICAL
    out.write(rep.render())
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
