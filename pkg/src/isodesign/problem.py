"""Sectioned key-value problem files.

Example::

    [domain]
    dim = 2
    min = 1, 1
    max = 2, 2
    grid = 65, 65

    [metric.G]
    g11 = x1^(-2)
    g22 = x2^(-2)

    [metric.Gt]
    g11 = 1
    g22 = 1

    [solver]
    x0 = 1, 1
    theta0 = 0

Off-diagonal metric entries default to ``0``; a missing ``[metric.Gt]``
section means the identity. Optional sections: ``[midplate]`` with ``y1``,
``y2``, ``y3`` for the thin-film commands; with it present the metrics are
3x3 while ``[domain]`` describes the 2d midplate grid.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import expr as ex
from .errors import ParseError, ValidationError
from .geometry import MetricField
from .grid import GridDomain

_SOLVER_FLOATS = (
    "theta0",
    "k1",
    "k2",
    "tol_path",
    "tol_init",
    "tol",
    "w_box",
    "gtol",
    "ftol",
)
_SOLVER_INTS = ("seed", "samples", "max_iter")


@dataclass
class ProblemFile:
    path: str
    digest: str
    domain: GridDomain
    G: MetricField
    Gt: MetricField
    solver: dict = field(default_factory=dict)
    midplate: tuple[str, str, str] | None = None
    f: str | None = None

    def get(self, key: str, default=None):
        return self.solver.get(key, default)


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """1-based line of every ``key`` in every ``[section]``."""
    out: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            out[(section, "")] = lineno
            continue
        if section is not None and ("=" in line or ":" in line):
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            out[(section, key)] = lineno
    return out


class _Ctx:
    def __init__(self, path: str, lines: dict):
        self.path, self.lines = path, lines

    def err(self, msg: str, section: str, key: str = "") -> ValidationError:
        return ValidationError(msg, self.path, self.lines.get((section, key), self.lines.get((section, ""))))

    def floats(self, cp, section, key, count=None) -> list[float]:
        raw = cp.get(section, key)
        try:
            vals = [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
        except ValueError:
            raise self.err(f"{key} must be a comma-separated list of numbers", section, key) from None
        if count is not None and len(vals) != count:
            raise self.err(f"{key} needs {count} values, got {len(vals)}", section, key)
        return vals


def _metric(cp, ctx: _Ctx, section: str, dim: int) -> MetricField:
    if not cp.has_section(section):
        return MetricField.identity(dim)
    entries = {}
    for key, value in cp.items(section):
        m = re.fullmatch(r"g([1-9])([1-9])", key)
        if not m:
            raise ctx.err(f"unknown metric key {key!r} (expected gij)", section, key)
        i, j = int(m.group(1)), int(m.group(2))
        if i > dim or j > dim:
            raise ctx.err(f"metric entry {key} exceeds dimension {dim}", section, key)
        try:
            ex.parse(value, dim)
        except ParseError as e:
            raise ctx.err(f"cannot parse {key}: {e}", section, key) from None
        if (max(i, j), min(i, j)) in entries:
            raise ctx.err(f"metric entry {key} given twice", section, key)
        entries[(max(i, j), min(i, j))] = (key, value)
    for i in range(1, dim + 1):
        if (i, i) not in entries:
            raise ctx.err(f"missing diagonal entry g{i}{i}", section)
    rows = [[entries.get((i, j), ("", "0"))[1] for j in range(1, i + 1)] for i in range(1, dim + 1)]
    full = [[rows[max(i, j)][min(i, j)] for j in range(dim)] for i in range(dim)]
    return MetricField.from_entries(full, dim)


def load_problem(path: str | Path) -> ProblemFile:
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ValidationError(f"cannot read problem file: {e.strerror}", path) from None
    ctx = _Ctx(path, _line_index(text))
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=path)
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        raise ValidationError(f"malformed problem file: {e.message if hasattr(e, 'message') else e}", path, line) from None
    known = {"domain", "metric.G", "metric.Gt", "solver", "midplate"}
    for s in cp.sections():
        if s not in known:
            raise ctx.err(f"unknown section [{s}]", s)
    if not cp.has_section("domain"):
        raise ValidationError("missing [domain] section", path)
    try:
        dim = int(cp.get("domain", "dim"))
    except (configparser.NoOptionError, ValueError):
        raise ctx.err("domain.dim must be an integer", "domain", "dim") from None
    if dim not in (2, 3):
        raise ctx.err("dim must be 2 or 3", "domain", "dim")
    for key in ("min", "max", "grid"):
        if not cp.has_option("domain", key):
            raise ctx.err(f"missing domain.{key}", "domain")
    lo = ctx.floats(cp, "domain", "min", dim)
    hi = ctx.floats(cp, "domain", "max", dim)
    grid = ctx.floats(cp, "domain", "grid", dim)
    if any(g != int(g) or g < 3 for g in grid):
        raise ctx.err("grid sizes must be integers >= 3", "domain", "grid")
    try:
        domain = GridDomain(tuple(lo), tuple(hi), tuple(int(g) for g in grid))
    except ValidationError as e:
        raise ctx.err(str(e), "domain") from None
    if not cp.has_section("metric.G"):
        raise ValidationError("missing [metric.G] section", path)
    # thin-film problems carry 3x3 metrics over a 2d midplate grid
    mdim = 3 if cp.has_section("midplate") else dim
    G = _metric(cp, ctx, "metric.G", mdim)
    Gt = _metric(cp, ctx, "metric.Gt", mdim)

    solver: dict = {}
    f_expr = None
    if cp.has_section("solver"):
        for key, value in cp.items("solver"):
            if key in _SOLVER_FLOATS:
                solver[key] = ctx.floats(cp, "solver", key, 1)[0]
            elif key in _SOLVER_INTS:
                try:
                    solver[key] = int(value)
                except ValueError:
                    raise ctx.err(f"{key} must be an integer", "solver", key) from None
            elif key == "x0":
                solver[key] = tuple(ctx.floats(cp, "solver", key, dim))
            elif key == "w0":
                solver[key] = np.array(ctx.floats(cp, "solver", key, dim * dim)).reshape(dim, dim)
            elif key == "lame":
                vals = ctx.floats(cp, "solver", key, 2)
                if min(vals) <= 0:
                    raise ctx.err("lame coefficients must be positive", "solver", key)
                solver[key] = tuple(vals)
            elif key == "h":
                vals = ctx.floats(cp, "solver", key)
                if not vals or min(vals) <= 0:
                    raise ctx.err("h must list positive thicknesses", "solver", key)
                solver[key] = tuple(vals)
            elif key == "f":
                try:
                    ex.parse(value, dim)
                except ParseError as e:
                    raise ctx.err(f"cannot parse f: {e}", "solver", key) from None
                f_expr = value
            else:
                raise ctx.err(f"unknown solver key {key!r}", "solver", key)
        if "x0" in solver:
            try:
                domain.index_of(solver["x0"])
            except ValidationError:
                raise ctx.err("x0 must be a grid node", "solver", "x0") from None

    mid = None
    if cp.has_section("midplate"):
        ys = []
        for k in ("y1", "y2", "y3"):
            if not cp.has_option("midplate", k):
                raise ctx.err(f"missing midplate.{k}", "midplate")
            v = cp.get("midplate", k)
            try:
                e = ex.parse(v, 3)
            except ParseError as err:
                raise ctx.err(f"cannot parse {k}: {err}", "midplate", k) from None
            if 3 in ex.variables(e):
                raise ctx.err(f"{k} depends on x3", "midplate", k)
            ys.append(v)
        mid = tuple(ys)
    return ProblemFile(path, hashlib.sha256(text.encode()).hexdigest()[:16], domain, G, Gt, solver, mid, f_expr)


def check_thickness_independent(prob: ProblemFile) -> None:
    """Reject metrics that depend on ``x3`` (thin-film commands)."""
    lines = _line_index(Path(prob.path).read_text())
    for section, M in (("metric.G", prob.G), ("metric.Gt", prob.Gt)):
        for i in range(M.dim):
            for j in range(i + 1):
                if 3 in ex.variables(M.entry(i, j)):
                    key = f"g{i + 1}{j + 1}"
                    line = lines.get((section, key), lines.get((section, f"g{j + 1}{i + 1}")))
                    raise ValidationError(f"{key} depends on x3; metrics must be thickness-independent", prob.path, line)
