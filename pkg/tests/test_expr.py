from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from isodesign import expr as ex
from isodesign.errors import ParseError, UnknownFunction, UnknownVariable

# ---------------------------------------------------------------- random expressions
# Every generated expression is smooth and finite on the sampling box [0.5, 1.5]^n:
# log, sqrt, division and fractional powers act on arguments bounded away from 0.
# Hypothesis draws a seed; the tree is built from it so generation stays cheap.

DIM = 3


def random_expression(rng: np.random.Generator, depth: int) -> str:
    """Random source string of tree depth at most ``depth``."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.4:
            return f"({rng.uniform(-2, 2)!r})"
        return f"x{rng.integers(1, DIM + 1)}"

    def sub():
        return random_expression(rng, depth - 1)

    def positive():
        return f"(1 + ({sub()})^2)"

    kind = rng.integers(10)
    if kind == 0:
        return f"({sub()} {rng.choice(list('+-*'))} {sub()})"
    if kind == 1:
        return f"({sub()} / {positive()})"
    if kind == 2:
        return f"(-({sub()}))"
    if kind == 3:
        return f"exp(sin({sub()}))"
    if kind == 4:
        return f"log({positive()})"
    if kind == 5:
        return f"sqrt({positive()})"
    if kind == 6:
        return f"sin({sub()})"
    if kind == 7:
        return f"cos({sub()})"
    if kind == 8:
        return f"(sin({sub()}))^{rng.choice([2, 3])}"
    return f"({positive()})^{rng.choice(['(-1.5)', '0.5', '(-1)', '(1/3)'])}"


expressions = st.integers(0, 2**63 - 1).map(lambda seed: random_expression(np.random.default_rng(seed), 6))
points = st.lists(st.floats(0.5, 1.5), min_size=DIM, max_size=DIM).map(np.array)


def _fd_grad(e, x, h=1e-5):
    g = np.empty(len(x))
    for i in range(len(x)):
        d = np.zeros(len(x))
        d[i] = h
        g[i] = (ex.evaluate(e, x + d) - ex.evaluate(e, x - d)) / (2 * h)
    return g


@settings(max_examples=500, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(expressions, points)
def test_jet_matches_finite_differences(src, x):
    e = ex.parse(src, DIM)
    jet = ex.eval_jet2(e, x)
    assert jet.value == pytest.approx(ex.evaluate(e, x), rel=1e-12, abs=1e-12)
    g_fd = _fd_grad(e, x)
    assert np.max(np.abs(jet.grad - g_fd)) <= 1e-6 * (1 + np.max(np.abs(jet.grad)))
    # Hessian columns from central differences of the (already verified) gradient
    h = 1e-5
    H_fd = np.empty((DIM, DIM))
    for k in range(DIM):
        d = np.zeros(DIM)
        d[k] = h
        H_fd[:, k] = (ex.eval_jet2(e, x + d).grad - ex.eval_jet2(e, x - d).grad) / (2 * h)
    assert np.max(np.abs(jet.hess - H_fd)) <= 1e-6 * (1 + np.max(np.abs(jet.hess)))
    assert np.array_equal(jet.hess, np.swapaxes(jet.hess, -1, -2))


@settings(max_examples=200, deadline=None)
@given(expressions)
def test_print_parse_round_trip(src):
    e = ex.parse(src, DIM)
    again = ex.parse(ex.to_string(e), DIM)
    x = np.random.default_rng(0).uniform(0.5, 1.5, size=(1000, DIM))
    np.testing.assert_allclose(ex.evaluate(again, x), ex.evaluate(e, x), rtol=1e-13, atol=1e-13)


@settings(max_examples=200, deadline=None)
@given(expressions, points, st.integers(1, DIM))
def test_symbolic_derivative_matches_jet(src, x, i):
    e = ex.parse(src, DIM)
    np.testing.assert_allclose(ex.evaluate(ex.diff(e, i), x), ex.eval_jet2(e, x).grad[i - 1], rtol=1e-10, atol=1e-10)


# ---------------------------------------------------------------- worked examples


def test_reciprocal_square_ast():
    e = ex.parse("1/(x1^2)", 2)
    assert e == ex.BinOp("/", ex.Const(1.0), ex.Pow(ex.Var(1), 2.0))


def test_zero_constant():
    assert ex.parse("0", 3) == ex.Const(0.0)
    assert ex.is_zero(ex.parse("0", 3))


def test_hand_evaluation():
    assert ex.evaluate(ex.parse("exp(2*x1) + sin(x2)", 2), np.zeros(2)) == 1.0


def test_bilinear_jet():
    j = ex.eval_jet2(ex.parse("x1*x2", 2), np.array([2.0, 3.0]))
    assert j.value == 6
    np.testing.assert_array_equal(j.grad, [3, 2])
    np.testing.assert_array_equal(j.hess, [[0, 1], [1, 0]])


def test_negative_log_jet():
    j = ex.eval_jet2(ex.parse("-log(x1)", 2), np.array([2.0, 5.0]))
    assert j.value == pytest.approx(-np.log(2))
    assert j.grad[0] == pytest.approx(-0.5)
    assert j.hess[0, 0] == pytest.approx(0.25)


def test_batch_shapes():
    x = np.random.default_rng(1).uniform(1, 2, size=(4, 5, 2))
    j = ex.eval_jet2(ex.parse("x1^3*cos(x2)", 2), x)
    assert j.value.shape == (4, 5) and j.grad.shape == (4, 5, 2) and j.hess.shape == (4, 5, 2, 2)


def test_unary_minus_binds_tighter_than_power():
    # base := '-' base, so the sign belongs to the base of '^'
    assert ex.evaluate(ex.parse("-x1^2", 1), np.array([3.0])) == 9.0
    assert ex.evaluate(ex.parse("-(x1^2)", 1), np.array([3.0])) == -9.0


@pytest.mark.parametrize(
    "src, err",
    [
        ("abs(x1)", UnknownFunction),
        ("x3", UnknownVariable),
        ("x1^x2", ParseError),
        ("1 +", ParseError),
        ("(x1", ParseError),
        ("", ParseError),
        ("x1 x2", ParseError),
    ],
)
def test_rejections_carry_position(src, err):
    with pytest.raises(err) as info:
        ex.parse(src, 2)
    assert "position" in str(info.value)
