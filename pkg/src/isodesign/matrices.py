"""Small dense-matrix kernels: SPD square roots, rotations, distance to SO(n).

Everything here operates on stacks of matrices with shape ``(..., n, n)``.
"""

from __future__ import annotations

import numpy as np

from .expr import Jet2

W_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])  # rotation by +pi/2


def rot2(theta) -> np.ndarray:
    """Rotation matrices ``R(theta)`` with shape ``theta.shape + (2, 2)``."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def perp(v) -> np.ndarray:
    """Rotate planar vectors by +pi/2: ``(v1, v2) -> (-v2, v1)``."""
    v = np.asarray(v)
    return np.stack([-v[..., 1], v[..., 0]], -1)


def conformal_part(F) -> np.ndarray:
    F = np.asarray(F)
    a = 0.5 * (F[..., 0, 0] + F[..., 1, 1])
    b = 0.5 * (F[..., 0, 1] - F[..., 1, 0])
    return np.stack([np.stack([a, b], -1), np.stack([-b, a], -1)], -2)


def anticonformal_part(F) -> np.ndarray:
    F = np.asarray(F)
    a = 0.5 * (F[..., 0, 0] - F[..., 1, 1])
    b = 0.5 * (F[..., 0, 1] + F[..., 1, 0])
    return np.stack([np.stack([a, b], -1), np.stack([b, -a], -1)], -2)


def sqrtm_2x2(G) -> np.ndarray:
    """Closed-form SPD square root ``(G + sqrt(det G) Id) / sqrt(tr G + 2 sqrt(det G))``."""
    G = np.asarray(G, dtype=float)
    s = np.sqrt(np.linalg.det(G))
    t = np.sqrt(np.trace(G, axis1=-2, axis2=-1) + 2.0 * s)
    return (G + s[..., None, None] * np.eye(2)) / t[..., None, None]


def sqrt_jet_2x2(g: list[list[Jet2]]) -> list[list[Jet2]]:
    """Closed-form square root of a 2x2 SPD matrix of jets, entrywise jets out."""
    s = (g[0][0] * g[1][1] - g[0][1] * g[1][0]).sqrt()
    t = (g[0][0] + g[1][1] + 2.0 * s).sqrt()
    inv_t = t.reciprocal()
    return [
        [(g[0][0] + s) * inv_t, g[0][1] * inv_t],
        [g[1][0] * inv_t, (g[1][1] + s) * inv_t],
    ]


def inv_jet_2x2(a: list[list[Jet2]]) -> list[list[Jet2]]:
    inv_det = (a[0][0] * a[1][1] - a[0][1] * a[1][0]).reciprocal()
    return [
        [a[1][1] * inv_det, -a[0][1] * inv_det],
        [-a[1][0] * inv_det, a[0][0] * inv_det],
    ]


def jet_matrix_arrays(m: list[list[Jet2]]):
    """Stack a nested list of jets into ``(value, grad, hess)`` arrays.

    Shapes are ``(..., r, c)``, ``(..., r, c, n)`` and ``(..., r, c, n, n)``.
    """
    val = np.stack([np.stack([e.value for e in row], -1) for row in m], -2)
    grad = np.stack([np.stack([e.grad for e in row], -2) for row in m], -3)
    hess = np.stack([np.stack([e.hess for e in row], -3) for row in m], -4)
    return val, grad, hess


def denman_beavers(A, tol: float = 1e-13, maxiter: int = 100) -> np.ndarray:
    """Principal square root of SPD matrices by the Denman--Beavers iteration."""
    A = np.asarray(A, dtype=float)
    Y = A.copy()
    Z = np.broadcast_to(np.eye(A.shape[-1]), A.shape).copy()
    for _ in range(maxiter):
        Y_next = 0.5 * (Y + np.linalg.inv(Z))
        Z = 0.5 * (Z + np.linalg.inv(Y))
        change = np.linalg.norm(Y_next - Y, axis=(-2, -1)) / np.linalg.norm(Y_next, axis=(-2, -1))
        Y = Y_next
        if np.all(change <= tol):
            break
    # one symmetrization keeps the result exactly symmetric
    return 0.5 * (Y + np.swapaxes(Y, -1, -2))


def sqrtm_spd(G) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.shape[-1] == 2:
        return sqrtm_2x2(G)
    return denman_beavers(G)


def _rotation_part_2x2(F):
    # the closest planar rotation maximizes (a + d) cos t + (c - b) sin t
    p = F[..., 0, 0] + F[..., 1, 1]
    q = F[..., 1, 0] - F[..., 0, 1]
    return p, q, np.hypot(p, q)


def nearest_rotation(F) -> np.ndarray:
    """Closest element of SO(n) to each ``F`` in the Frobenius norm (identity on ties)."""
    F = np.asarray(F, dtype=float)
    if F.shape[-1] == 2:
        p, q, r = _rotation_part_2x2(F)
        safe = np.where(r > 0, r, 1.0)
        c, s = np.where(r > 0, p / safe, 1.0), np.where(r > 0, q / safe, 0.0)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    U, _, Vt = np.linalg.svd(F)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    U = U.copy()
    U[..., :, -1] *= d[..., None]
    return U @ Vt


def dist2_so(F) -> np.ndarray:
    """Squared Frobenius distance from ``F`` to SO(n).

    With singular values ``s_1 >= ... >= s_n`` this is ``sum (s_i - 1)^2``
    when ``det F > 0``; otherwise the smallest one is reflected,
    ``... + (s_n + 1)^2``. For ``n = 2`` it is ``|F - R|^2`` with the
    closed-form nearest rotation ``R``.
    """
    F = np.asarray(F, dtype=float)
    if F.shape[-1] == 2:
        # |F - R|^2 avoids the cancellation in |F|^2 + 2 - 2 r near SO(2)
        return np.sum((F - nearest_rotation(F)) ** 2, axis=(-2, -1))
    s = np.linalg.svd(F, compute_uv=False)
    neg = np.linalg.det(F) < 0
    s_last = np.where(neg, -s[..., -1], s[..., -1])
    return np.sum((s[..., :-1] - 1.0) ** 2, axis=-1) + (s_last - 1.0) ** 2
