from __future__ import annotations

import numpy as np
import pytest

from isodesign.dimred import (
    LameParams,
    Midplate,
    compat_matrix,
    cosserat_b,
    elastic_density,
    limit_functional,
    optimal_warp,
    q2_form,
    q2_min,
    q3_form,
    recovery_energy,
    recovery_study,
)
from isodesign.errors import DegenerateSurface, ValidationError
from isodesign.geometry import MetricField
from isodesign.grid import GridDomain
from isodesign.matrices import sqrtm_spd

I3 = MetricField.identity(3)
ONE = LameParams(1.0, 1.0)
CYL = ("sin(x1)", "x2", "cos(x1)")
FLAT = ("x1", "x2", "0")


def plate(n=33):
    return GridDomain((0, 0), (1, 1), (n, n))


def random_spd(rng, count, n):
    A = rng.normal(size=(count, n, n))
    return A @ np.swapaxes(A, -1, -2) + 0.3 * np.eye(n)


def random_rotations(rng, count):
    Q, R = np.linalg.qr(rng.normal(size=(count, 3, 3)))
    Q = Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[..., None, :]
    return np.where(np.linalg.det(Q)[:, None, None] < 0, -Q, Q)


# ---------------------------------------------------------------- quadratic forms


def test_q2_formula_equals_minimization(rng):
    Gt = random_spd(rng, 500, 3)
    F = rng.normal(size=(500, 2, 2))
    lame = LameParams(*rng.uniform(0.2, 3, 2))
    value, _ = q2_min(lame, Gt, F)
    assert np.max(np.abs(value - q2_form(lame, Gt[:, :2, :2], F))) <= 1e-10


def test_q2_minimizer_is_optimal(rng):
    Gt = random_spd(rng, 1, 3)[0]
    F = rng.normal(size=(2, 2))
    value, c = q2_min(ONE, Gt, F)
    P = np.linalg.inv(sqrtm_spd(Gt))

    def q(cc):
        Fs = np.zeros((3, 3))
        Fs[:2, :2] = F
        Fs[:, 2] += cc
        return q3_form(ONE, P @ (0.5 * (Fs + Fs.T)) @ P)

    assert q(c) == pytest.approx(value, abs=1e-12)
    for _ in range(20):
        assert q(c + 0.1 * rng.normal(size=3)) >= value - 1e-12


def test_q2_example():
    assert q2_form(ONE, np.eye(2), np.diag([1.0, 0.0])) == pytest.approx(1.5)


def test_forms_nonnegative_and_blind_to_antisymmetric_parts(rng):
    lame = LameParams(0.5, 2.0)
    F3 = rng.normal(size=(300, 3, 3))
    F2 = rng.normal(size=(300, 2, 2))
    Gt2 = random_spd(rng, 300, 2)
    assert np.all(q3_form(lame, F3) >= 0) and np.all(q2_form(lame, Gt2, F2) >= 0)
    A3 = F3 - np.swapaxes(F3, -1, -2)
    A2 = F2 - np.swapaxes(F2, -1, -2)
    assert np.all(q3_form(lame, A3) == 0) and np.all(q2_form(lame, Gt2, A2) == 0)
    np.testing.assert_allclose(q3_form(lame, F3 + A3), q3_form(lame, F3), rtol=1e-12)
    np.testing.assert_allclose(q2_form(lame, Gt2, F2 + A2), q2_form(lame, Gt2, F2), rtol=1e-12)


def test_density_is_frame_invariant_and_vanishes_on_rotations(rng):
    lame = LameParams(1.3, 0.7)
    F = rng.normal(size=(50, 3, 3)) + 2 * np.eye(3)
    R = random_rotations(rng, 20)
    W = elastic_density(lame, F)
    for Q in R:
        assert np.max(np.abs(elastic_density(lame, Q @ F) - W)) <= 1e-10
    assert np.max(elastic_density(lame, R)) <= 1e-24


def test_density_hessian_at_identity_is_q3(rng):
    lame = LameParams(1.3, 0.7)
    t = 1e-4
    for F in rng.normal(size=(10, 3, 3)):
        second = (elastic_density(lame, np.eye(3) + t * F) + elastic_density(lame, np.eye(3) - t * F)) / t**2
        assert second == pytest.approx(q3_form(lame, F), rel=1e-5)


# ---------------------------------------------------------------- midplate geometry


def test_compatibility_examples():
    assert np.max(np.abs(compat_matrix(Midplate(plate(9), FLAT, I3, I3)))) == 0
    assert np.max(np.abs(compat_matrix(Midplate(plate(129), CYL, I3, I3)))) <= 1e-6
    stretched = compat_matrix(Midplate(plate(9), ("2*x1", "x2", "0"), I3, I3))
    np.testing.assert_allclose(stretched[..., 0, 0], 3.0)
    np.testing.assert_allclose(stretched[..., 1, 1], 0.0, atol=1e-15)


def test_compatibility_from_nodal_values():
    dom = plate(65)
    x = dom.points
    y = np.stack([np.sin(x[..., 0]), x[..., 1], np.cos(x[..., 0])], -1)
    assert np.max(np.abs(compat_matrix(Midplate(dom, y, I3, I3)))) <= 1e-3


def test_flat_plate_cosserat_vector():
    rep = cosserat_b(Midplate(plate(9), FLAT, I3, I3))
    np.testing.assert_allclose(rep.b.values, np.broadcast_to([0, 0, 1], rep.b.values.shape), atol=1e-15)


def test_cylinder_cosserat_vector_is_normal():
    dom = plate(17)
    rep = cosserat_b(Midplate(dom, CYL, I3, I3))
    x = dom.points
    N = np.stack([np.sin(x[..., 0]), np.zeros(dom.shape), np.cos(x[..., 0])], -1)
    np.testing.assert_allclose(rep.b.values, N, atol=1e-14)


def test_sheared_target_cosserat_vector():
    Gt = MetricField.from_entries([["1", "0", "0.1"], ["0", "1", "0"], ["0.1", "0", "1"]], 3)
    rep = cosserat_b(Midplate(plate(9), FLAT, I3, Gt))
    # b = (Gt13, Gt23, sqrt(det Gt)) for the identity midplate and Gt2 = Id
    np.testing.assert_allclose(rep.b.values, np.broadcast_to([0.1, 0.0, np.sqrt(0.99)], rep.b.values.shape), atol=1e-15)


def test_normal_identities_on_anisotropic_cylinder():
    G = MetricField.from_entries([["4", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]], 3)
    mid = Midplate(plate(33), ("0.5*sin(x1)", "x2", "cos(x1)"), G, I3)
    rep = cosserat_b(mid)
    assert rep.compat <= 1e-12
    assert rep.unit_defect <= 1e-9 and rep.orthogonality <= 1e-9


def test_unit_defect_tracks_compatibility(rng):
    # <M, G M> = det((grad y)^T G grad y) / det Gt2 for any midplate
    G = MetricField.from_entries([["2", "0.3", "0"], ["0.3", "1", "0.1"], ["0", "0.1", "1.5"]], 3)
    mid = Midplate(plate(9), ("x1 + 0.2*x2^2", "x2", "0.3*x1*x2"), G, I3)
    rep = cosserat_b(mid)
    g, _ = mid.metrics_at(mid.domain.points)
    GM = np.einsum("...ij,...j->...i", g, rep.normal_metric)
    J = mid.grad_y()
    np.testing.assert_allclose(np.sum(rep.normal_metric * GM, -1), np.linalg.det(np.swapaxes(J, -1, -2) @ g @ J), rtol=1e-12)


# ---------------------------------------------------------------- limit and recovery


def test_flat_plate_limit_and_recovery_vanish():
    mid = Midplate(plate(9), FLAT, I3, I3)
    assert limit_functional(mid, LameParams(2.0, 0.5)) == 0
    for h in (0.5, 0.1):
        assert recovery_energy(mid, ONE, h) <= 1e-28


def test_cylinder_limit():
    mid = Midplate(plate(33), CYL, I3, I3)
    assert limit_functional(mid, ONE) == pytest.approx(0.0625, abs=1e-6)
    assert limit_functional(mid, LameParams(1.0, 2.0)) == pytest.approx(1 / 9, abs=1e-6)


def test_cylinder_limit_is_grid_independent():
    vals = [limit_functional(Midplate(plate(n), CYL, I3, I3), ONE) for n in (9, 33, 129)]
    assert max(vals) - min(vals) <= 1e-8


def test_cylinder_recovery_converges():
    mid = Midplate(plate(33), CYL, I3, I3)
    rows = recovery_study(mid, ONE, [1 / 8, 1 / 16, 1 / 32, 1 / 64])
    gaps = [abs(r.ratio - 1) for r in rows]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 0.1


def test_warp_lowers_the_energy():
    mid = Midplate(plate(33), CYL, I3, I3)
    assert np.max(np.abs(optimal_warp(mid, ONE))) > 0.1
    for h in (1 / 16, 1 / 64):
        assert recovery_energy(mid, ONE, h, warp="zero") > recovery_energy(mid, ONE, h) + 1e-3


# ---------------------------------------------------------------- validation


def test_thickness_dependent_metric_rejected():
    G = MetricField.from_entries([["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1 + x3^2"]], 3)
    with pytest.raises(ValidationError):
        Midplate(plate(5), FLAT, G, I3)
    with pytest.raises(ValidationError):
        Midplate(plate(5), ("x1", "x2", "x3"), I3, I3)


def test_degenerate_midplate_rejected():
    with pytest.raises(DegenerateSurface):
        cosserat_b(Midplate(plate(5), ("x1", "x1", "0"), I3, I3))


def test_bad_parameters():
    with pytest.raises(ValidationError):
        LameParams(-1.0, 1.0)
    with pytest.raises(ValidationError):
        recovery_energy(Midplate(plate(5), FLAT, I3, I3), ONE, 0.0)
