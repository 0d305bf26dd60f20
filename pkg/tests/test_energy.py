from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from isodesign.energy import (
    EnergyFunctional,
    NodalMetrics,
    affine_initial,
    incompat_energy,
    minimize_energy,
    nodal_dist2,
    orientation_check,
)
from isodesign.geometry import MetricField
from isodesign.grid import DeformationField, GridDomain
from isodesign.matrices import dist2_so, nearest_rotation, rot2
from isodesign.optim import lbfgs

from conftest import square

UNIT = GridDomain((0, 0), (1, 1), (17, 17))


def xi0(domain):
    return DeformationField.from_function(domain, lambda x: 0.5 * x**2)


def test_identity_has_zero_energy():
    I = MetricField.identity(2)
    assert incompat_energy(I, I, DeformationField.affine(UNIT, np.eye(2))) == 0


def test_dilation_energy_is_dimension_times_volume():
    I = MetricField.identity(3)
    dom = GridDomain((0, 0, 0), (1, 2, 1), (5, 5, 5))
    assert incompat_energy(I, I, DeformationField.affine(dom, 2 * np.eye(3))) == pytest.approx(3 * dom.volume)


def test_cool_solution_energy(cool):
    G, Gt = cool
    assert incompat_energy(G, Gt, xi0(square(n=65))) <= 1e-6


def test_cool_solution_energy_refines_at_second_order(cool):
    G, Gt = cool
    e = [incompat_energy(G, Gt, xi0(square(n=n))) for n in (9, 17, 33, 65)]
    assert all(v == 0 or v <= 1e-20 for v in e) or np.all(np.log2(np.array(e[:-1]) / np.array(e[1:])) >= 2.0), e


@settings(max_examples=200, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(-3, 3)))
def test_distance_to_rotations(F):
    R = nearest_rotation(F)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-10)
    assert np.linalg.det(R) == pytest.approx(1.0)
    assert dist2_so(F) == pytest.approx(np.sum((F - R) ** 2), abs=1e-9)
    # no sampled rotation is closer
    for th in np.linspace(0, 2 * np.pi, 7):
        c, s = np.cos(th), np.sin(th)
        Q = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        assert np.sum((F - Q) ** 2) >= dist2_so(F) - 1e-9


def test_zero_energy_iff_rotation(rng):
    # rotation-valued transformed gradients give zero nodal energy, others do not
    G = MetricField.from_entries([["2", "0.5"], ["0.5", "1"]], 2)
    Gt = MetricField.from_entries([["1", "0"], ["0", "3"]], 2)
    m = NodalMetrics.build(G, Gt, UNIT)
    th = 0.7
    w = np.linalg.solve(m.V[0, 0], rot2(th) @ np.linalg.inv(m.Vt_inv[0, 0]))
    xi = DeformationField.affine(UNIT, w)
    d2 = nodal_dist2(G, Gt, xi, m)
    assert np.max(d2) <= 1e-24
    F = m.transformed(xi.grad)
    np.testing.assert_allclose(F, nearest_rotation(F), atol=1e-12)
    bent = DeformationField.affine(UNIT, w @ np.diag([1.1, 1.0]))
    F = m.transformed(bent.grad)
    np.testing.assert_allclose(nodal_dist2(G, Gt, bent, m), np.sum((F - nearest_rotation(F)) ** 2, axis=(-2, -1)), atol=1e-14)
    assert np.min(nodal_dist2(G, Gt, bent, m)) > 1e-4


def test_energy_gradient_matches_finite_differences(cool, rng):
    G, Gt = cool
    dom = square(n=7)
    fun = EnergyFunctional(G, Gt, dom)
    x = (0.5 * dom.points**2 + 0.05 * rng.normal(size=dom.shape + (2,))).reshape(-1)
    _, g = fun(x)
    h = 1e-6
    for k in rng.choice(x.size, 12, replace=False):
        e = np.zeros_like(x)
        e[k] = h
        fd = (fun(x + e)[0] - fun(x - e)[0]) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def smooth_perturbation(rng, x, amplitude):
    """Random low-frequency field with sup norm at most ``amplitude``."""
    out = np.zeros(x.shape)
    for s in range(x.shape[-1]):
        k = rng.integers(1, 4, size=(3, 2))
        c = rng.uniform(-1, 1, 3)
        ph = rng.uniform(0, 2 * np.pi, 3)
        modes = np.sin(np.pi * np.einsum("mk,...k->...m", k, x) + ph)
        out[..., s] = modes @ c / np.sum(np.abs(c))
    return amplitude * out


def test_minimize_from_perturbed_identity(rng):
    I = MetricField.identity(2)
    pert = smooth_perturbation(rng, UNIT.points, 0.1)
    assert np.max(np.abs(pert)) <= 0.1
    start = DeformationField(UNIT, UNIT.points + pert)
    res = minimize_energy(I, I, start)
    assert res.energy <= 1e-8
    assert all(b[1] <= a[1] for a, b in zip(res.trace, res.trace[1:]))


def test_minimize_cool_from_affine_start(cool):
    G, Gt = cool
    dom = square(n=33)
    res = minimize_energy(G, Gt, DeformationField.affine(dom, np.eye(2)))
    assert res.energy <= 1e-4
    assert not orientation_check(res.xi).flagged


def test_incompatible_pair_has_stable_positive_energy():
    G, Gt = MetricField.identity(2), MetricField.conformal("exp(2*x1^2)", 2)
    e = []
    for n in (17, 33):
        dom = GridDomain((0, 0), (1, 1), (n, n))
        e.append(minimize_energy(G, Gt, affine_initial(G, Gt, dom), max_iter=3000, gtol=1e-9).energy)
    assert min(e) > 1e-4
    assert abs(e[0] - e[1]) <= 0.05 * e[1], e


def test_orientation_examples(cool):
    assert orientation_check(DeformationField.affine(UNIT, np.eye(2))).min_det == pytest.approx(1.0)
    rep = orientation_check(xi0(square(n=65)))
    assert rep.min_det >= 1 - 1e-9 and not rep.flagged
    refl = orientation_check(DeformationField.affine(UNIT, np.diag([-1.0, 1.0])))
    assert refl.min_det == pytest.approx(-1.0) and refl.flagged and refl.nonpositive_nodes == UNIT.size


def test_lbfgs_on_rosenbrock():
    def f(x):
        a, b = x
        val = (1 - a) ** 2 + 100 * (b - a * a) ** 2
        return val, np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])

    res = lbfgs(f, [-1.2, 1.0], max_iter=500, gtol=1e-10)
    np.testing.assert_allclose(res.x, [1, 1], atol=1e-6)
    vals = [t[1] for t in res.trace]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
