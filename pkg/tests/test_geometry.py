from __future__ import annotations

import numpy as np
import pytest

from isodesign import expr as ex
from isodesign.errors import NotSPD, ValidationError
from isodesign.geometry import (
    MetricField,
    christoffel,
    conformal_gauss_residual,
    conformal_ricci_residual,
    gauss_curvature,
    metric_jet,
    pullback_metric,
    ricci,
    riemann,
)
from isodesign.matrices import denman_beavers, sqrtm_2x2


def random_metric(rng, dim: int) -> MetricField:
    """Curved SPD metric: diagonally dominant trigonometric entries."""

    def wave(amp):
        a = rng.uniform(-1.5, 1.5, dim)
        phase = rng.uniform(0, 2 * np.pi)
        lin = " + ".join(f"({float(c)!r})*x{k + 1}" for k, c in enumerate(a))
        return f"({amp!r})*sin({lin} + ({float(phase)!r}))"

    rows = []
    for i in range(dim):
        rows.append([f"{dim + 1} + {wave(1.0)}" if i == j else wave(0.3) for j in range(dim)])
    for i in range(dim):
        for j in range(i):
            rows[j][i] = rows[i][j]
    return MetricField.from_entries(rows, dim)


def random_points(rng, dim, count=1000):
    return rng.uniform(-1, 1, size=(count, dim))


@pytest.mark.parametrize("dim", [2, 3])
def test_metric_compatibility(rng, dim):
    for _ in range(3):
        M = random_metric(rng, dim)
        x = random_points(rng, dim)
        cj = christoffel(M, x)
        g, dg, gam = cj.jet.g, cj.jet.dg, cj.gamma2
        # d_i G_jk - G_mk Gamma^m_ij - G_mj Gamma^m_ik
        res = (
            np.einsum("...jki->...ijk", dg)
            - np.einsum("...mk,...mij->...ijk", g, gam)
            - np.einsum("...mj,...mik->...ijk", g, gam)
        )
        assert np.max(np.abs(res)) <= 1e-9


@pytest.mark.parametrize("dim", [2, 3])
def test_riemann_symmetries(rng, dim):
    for _ in range(3):
        M = random_metric(rng, dim)
        _, R = riemann(M, random_points(rng, dim))
        assert np.max(np.abs(R)) > 1e-3  # the sample metrics are genuinely curved
        assert np.max(np.abs(R + np.swapaxes(R, -1, -2))) <= 1e-9
        assert np.max(np.abs(R + np.swapaxes(R, -4, -3))) <= 1e-9
        assert np.max(np.abs(R - np.einsum("...mijk->...jkmi", R))) <= 1e-9
        bianchi = R + np.einsum("...mjki->...mijk", R) + np.einsum("...mkij->...mijk", R)
        assert np.max(np.abs(bianchi)) <= 1e-9


def test_christoffel_matches_finite_differences(rng):
    M = random_metric(rng, 3)
    x = random_points(rng, 3, 20)
    h = 1e-5
    dg = np.stack([(M.values(x + h * e) - M.values(x - h * e)) / (2 * h) for e in np.eye(3)], -1)
    first = 0.5 * (np.einsum("...mkl->...mkl", dg) + np.einsum("...mlk->...mkl", dg) - np.einsum("...klm->...mkl", dg))
    gam_fd = np.einsum("...im,...mkl->...ikl", np.linalg.inv(M.values(x)), first)
    np.testing.assert_allclose(christoffel(M, x).gamma2, gam_fd, atol=1e-8)


def test_identity_christoffel_and_riemann_vanish():
    x = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    assert np.all(christoffel(MetricField.identity(3), x).gamma2 == 0)
    assert np.all(riemann(MetricField.identity(3), x)[1] == 0)


def test_conformal_christoffel_symbols():
    cj = christoffel(MetricField.conformal("exp(2*x1)", 2), np.zeros(2))
    g = cj.gamma2
    assert g[0, 0, 0] == pytest.approx(1)
    assert g[0, 1, 1] == pytest.approx(-1)
    assert g[1, 0, 1] == pytest.approx(1) and g[1, 1, 0] == pytest.approx(1)


def test_cool_metric_christoffel(cool):
    G, _ = cool
    assert christoffel(G, np.array([1.0, 1.0])).gamma2[0, 0, 0] == pytest.approx(-1.0)


def test_cool_metric_sqrt_and_derivative(cool):
    G, _ = cool
    mj = metric_jet(G, np.array([2.0, 1.0]))
    np.testing.assert_allclose(mj.sqrt_g, np.diag([0.5, 1.0]), atol=1e-15)
    assert mj.d_sqrt_g[0, 0, 0] == pytest.approx(-0.25)


@pytest.mark.parametrize("dim", [2, 3])
def test_sqrt_multiplies_back(rng, dim):
    M = random_metric(rng, dim)
    mj = metric_jet(M, random_points(rng, dim, 200))
    assert np.max(np.abs(mj.sqrt_g @ mj.sqrt_g - mj.g)) <= 1e-10
    np.testing.assert_allclose(mj.sqrt_g, np.swapaxes(mj.sqrt_g, -1, -2), atol=1e-14)


def test_closed_form_and_iterative_sqrt_agree(rng):
    A = rng.normal(size=(100, 2, 2))
    G = A @ np.swapaxes(A, -1, -2) + 0.1 * np.eye(2)
    np.testing.assert_allclose(sqrtm_2x2(G), denman_beavers(G), atol=1e-10)


def test_flat_pullbacks_have_zero_riemann(rng):
    x2 = random_points(rng, 2, 200)
    phi = [ex.parse("x1 + 0.1*sin(x2)", 2), ex.parse("x2", 2)]
    assert np.max(np.abs(riemann(pullback_metric(phi), x2)[1])) <= 1e-8
    phi3 = [ex.parse(s, 3) for s in ("x1 + 0.2*sin(x2*x3)", "x2 + 0.1*x1^2", "x3 + 0.3*cos(x1) * x2")]
    x3 = random_points(rng, 3, 200) * 0.5
    assert np.max(np.abs(riemann(pullback_metric(phi3), x3)[1])) <= 1e-7


def test_gauss_curvature_two_ways_agree(rng):
    for _ in range(5):
        M = random_metric(rng, 2)
        k = gauss_curvature(M, random_points(rng, 2, 500))
        assert np.max(k.discrepancy) <= 1e-7


@pytest.mark.parametrize(
    "factor, point, expected",
    [
        ("1", (0.3, 0.4), 0.0),
        ("exp(x1^2)", (0.0, 0.0), -1.0),  # g = x1^2/2
        ("exp(2*x1^2)", (0.0, 0.0), -2.0),  # g = x1^2
        ("4*(1 + x1^2 + x2^2)^(-2)", (0.3, -0.7), 1.0),  # round sphere
    ],
)
def test_gauss_curvature_examples(factor, point, expected):
    k = gauss_curvature(MetricField.conformal(factor, 2), np.array(point))
    assert k.value == pytest.approx(expected, abs=1e-10)
    assert k.discrepancy <= 1e-10


def test_cool_metric_is_flat(cool):
    G, _ = cool
    x = np.random.default_rng(3).uniform(1, 2, (200, 2))
    assert np.max(np.abs(gauss_curvature(G, x).value)) <= 1e-12


def test_conformal_ricci_examples():
    Id = MetricField.identity(3)
    x = np.random.default_rng(4).uniform(0, 1, (300, 3))
    assert np.max(np.abs(conformal_ricci_residual(Id, "1.7", x))) == 0
    f = "-2*log(sqrt((x1 - 2)^2 + (x2 + 1)^2 + x3^2)) + 0.4"
    assert np.max(np.abs(conformal_ricci_residual(Id, f, x))) <= 1e-7
    r = conformal_ricci_residual(Id, "x1", x[:1])[0]
    np.testing.assert_allclose(r, np.diag([0.0, -1.0, -1.0]), atol=1e-14)


def test_conformal_ricci_residual_is_ricci_of_scaled_metric(rng):
    # Ric(e^{2f} Gt) computed directly equals the residual for a curved Gt
    Gt = MetricField.conformal("1 + 0.2*x1^2", 3)
    f = "0.3*x2 + 0.1*x1*x3"
    scaled = MetricField.conformal("exp(2*(0.3*x2 + 0.1*x1*x3)) * (1 + 0.2*x1^2)", 3)
    x = random_points(rng, 3, 50)
    np.testing.assert_allclose(conformal_ricci_residual(Gt, f, x), ricci(scaled, x), atol=1e-10)


def test_conformal_gauss_examples():
    x = np.random.default_rng(5).uniform(-1, 1, (300, 2))
    Id = MetricField.identity(2)
    assert np.max(np.abs(conformal_gauss_residual(Id, "x1^2 - x2^2", x))) <= 1e-8
    np.testing.assert_allclose(conformal_gauss_residual(Id, "x1^2", x), -2.0, atol=1e-12)
    lam = MetricField.conformal("exp(2*x1)", 2)
    assert np.max(np.abs(conformal_gauss_residual(lam, "2*x1", x))) <= 1e-12


def test_conformal_gauss_residual_is_scaled_curvature(rng):
    Gt = random_metric(rng, 2)
    x = random_points(rng, 2, 50)
    res = conformal_gauss_residual(Gt, "0.4*x1*x2", x)
    # kappa(e^{2f} Gt) = e^{-2f} (kappa(Gt) - Lap f)
    entries = {k: f"exp(0.8*x1*x2) * ({v})" for k, v in Gt.to_strings().items()}
    scaled = MetricField.from_entries(entries, 2)
    np.testing.assert_allclose(gauss_curvature(scaled, x).value, np.exp(-0.8 * x[:, 0] * x[:, 1]) * res, atol=1e-10)


def test_not_spd_reports_point():
    M = MetricField.from_entries([["x1", "0"], ["0", "1"]], 2)
    with pytest.raises(NotSPD) as info:
        metric_jet(M, np.array([[0.5, 0.0], [-0.25, 0.3]]))
    assert "-0.25" in str(info.value)


def test_dimension_and_missing_entry_validation():
    with pytest.raises(ValidationError):
        MetricField.from_entries({"g11": "1"}, 2)
    with pytest.raises(ValidationError):
        gauss_curvature(MetricField.identity(3), np.zeros(3))
