"""Monotone line-search descent used by the variational solvers."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFinite

MAX_HALVINGS = 60


@dataclass
class DescentResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    message: str
    trace: list[tuple[int, float, float]] = field(default_factory=list)  # (iteration, value, step)


def lbfgs(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    *,
    max_iter: int = 500,
    gtol: float = 1e-10,
    ftol: float = 0.0,
    memory: int = 10,
    c1: float = 1e-4,
) -> DescentResult:
    """Minimize ``fun`` (returning value and gradient) by L-BFGS with Armijo backtracking.

    Steps producing non-finite values are rejected and halved; after
    ``MAX_HALVINGS`` consecutive halvings the run stops (``NonFinite`` is
    raised if no finite trial value was ever seen). The recorded values are
    nonincreasing by construction and this is asserted on every iteration.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFinite("initial energy or gradient is not finite")
    trace = [(0, float(f), 0.0)]
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    message = "max_iter reached"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol:
            converged, message = True, "gradient tolerance reached"
            it -= 1
            break
        d = _two_loop(g, S, Y)
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -gnorm**2
            S.clear()
            Y.clear()
        t = 1.0 if S else min(1.0, 1.0 / gnorm)
        seen_finite = False
        for _ in range(MAX_HALVINGS):
            x_new = x + t * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and np.all(np.isfinite(g_new)):
                seen_finite = True
                if f_new <= f + c1 * t * slope:
                    break
            t *= 0.5
        else:
            if not seen_finite:
                raise NonFinite(f"no finite trial point after {MAX_HALVINGS} step halvings")
            message = "line search stalled"
            it -= 1
            break
        assert f_new <= f, "descent trace must be nonincreasing"
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
        decrease = f - f_new
        x, f, g = x_new, f_new, g_new
        trace.append((it, float(f), float(t)))
        if ftol > 0 and decrease <= ftol * max(abs(f), 1.0):
            converged, message = True, "relative decrease below ftol"
            break
    return DescentResult(x, float(f), float(np.linalg.norm(g)), it, converged, message, trace)


def _two_loop(g, S, Y) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in reversed(list(zip(S, Y))):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((rho, a, s, y))
        q -= a * y
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for rho, a, s, y in reversed(alphas):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q
