"""Rectangular grids, grid functions and finite-difference operators."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import NonFinite, ValidationError


@dataclass(frozen=True)
class GridDomain:
    """Tensor-product grid on the box ``[lower, upper]`` with ``nodes[k]`` points per axis."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    nodes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "nodes", tuple(int(v) for v in self.nodes))
        if not (len(self.lower) == len(self.upper) == len(self.nodes)):
            raise ValidationError("grid corners and node counts disagree in dimension")
        if any(n < 3 for n in self.nodes):
            raise ValidationError("every grid axis needs at least 3 nodes")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValidationError("grid upper corner must exceed lower corner on every axis")

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((u - l) / (n - 1) for l, u, n in zip(self.lower, self.upper, self.nodes))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def volume(self) -> float:
        return float(np.prod([u - l for l, u in zip(self.lower, self.upper)]))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.upper, self.lower)))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, u, n) for l, u, n in zip(self.lower, self.upper, self.nodes)]

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``nodes + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def index_of(self, x, tol: float = 1e-9) -> tuple[int, ...]:
        """Grid index of the node at ``x``; raises if ``x`` is not a node."""
        idx = []
        for xk, l, h, n in zip(x, self.lower, self.spacing, self.nodes):
            t = (float(xk) - l) / h
            i = int(round(t))
            if abs(t - i) > tol or not 0 <= i < n:
                raise ValidationError(f"point {tuple(x)} is not a grid node")
            idx.append(i)
        return tuple(idx)

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.ones(self.nodes)
        for k, (n, h) in enumerate(zip(self.nodes, self.spacing)):
            wk = np.full(n, h)
            wk[0] = wk[-1] = 0.5 * h
            shape = [1] * self.dim
            shape[k] = n
            w = w * wk.reshape(shape)
        return w

    def integrate(self, f) -> float:
        """Trapezoidal integral of nodal values ``f`` (shape ``nodes``)."""
        return float(np.sum(self.trapezoid_weights * f))

    def derivative(self, f, axis: int, order: int = 2) -> np.ndarray:
        """Derivative along grid ``axis`` (central inside, one-sided on the boundary).

        ``order`` is 2 or 4; the fourth-order stencils need at least 5 nodes
        and fall back to second order otherwise.
        """
        h = self.spacing[axis]
        if order == 2 or self.nodes[axis] < 5:
            return np.gradient(f, h, axis=axis, edge_order=2)
        if order != 4:
            raise ValueError("order must be 2 or 4")
        g = np.moveaxis(np.asarray(f, dtype=float), axis, 0)
        d = np.empty_like(g)
        d[2:-2] = (g[:-4] - 8 * g[1:-3] + 8 * g[3:-1] - g[4:]) / (12 * h)
        d[0] = (-25 * g[0] + 48 * g[1] - 36 * g[2] + 16 * g[3] - 3 * g[4]) / (12 * h)
        d[1] = (-3 * g[0] - 10 * g[1] + 18 * g[2] - 6 * g[3] + g[4]) / (12 * h)
        d[-1] = (25 * g[-1] - 48 * g[-2] + 36 * g[-3] - 16 * g[-4] + 3 * g[-5]) / (12 * h)
        d[-2] = (3 * g[-1] + 10 * g[-2] - 18 * g[-3] + 6 * g[-4] - g[-5]) / (12 * h)
        return np.moveaxis(d, 0, axis)

    def gradient(self, f, order: int = 2) -> np.ndarray:
        """Jacobian of a vector field with values ``nodes + (m,)``.

        Returns ``nodes + (m, dim)`` with ``[..., s, i] = d_i f^s``.
        """
        return np.stack([self.derivative(f, k, order) for k in range(self.dim)], axis=-1)

    @cached_property
    def diff_matrices(self) -> list[sp.csr_matrix]:
        """Sparse matrices acting on C-ordered nodal vectors; same stencil as :meth:`derivative`."""
        mats = []
        for k in range(self.dim):
            factors = [sp.identity(n, format="csr") for n in self.nodes]
            factors[k] = _diff_1d(self.nodes[k], self.spacing[k])
            M = factors[0]
            for F in factors[1:]:
                M = sp.kron(M, F, format="csr")
            mats.append(M.tocsr())
        return mats

    def refine(self, factor: int = 2) -> "GridDomain":
        return GridDomain(self.lower, self.upper, tuple((n - 1) * factor + 1 for n in self.nodes))


def _diff_1d(n: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        D[i, i - 1] = -0.5 / h
        D[i, i + 1] = 0.5 / h
    D[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[n - 1, n - 3 : n] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D.tocsr()


@dataclass
class GridFunction:
    """Values sampled on every node of ``domain``; trailing axes hold the value shape."""

    domain: GridDomain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[: self.domain.dim] != self.domain.shape:
            raise ValidationError("grid function shape does not match its domain")

    @property
    def value_shape(self) -> tuple[int, ...]:
        return self.values.shape[self.domain.dim :]

    def gradient(self) -> np.ndarray:
        return self.domain.gradient(self.values)


@dataclass
class DeformationField:
    """Deformation ``xi`` on a grid with a cached discrete Jacobian.

    Assign through :meth:`update` so the cache stays consistent.
    """

    domain: GridDomain
    values: np.ndarray
    _grad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.update(self.values)

    def update(self, values) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != self.domain.shape + (self.domain.dim,):
            raise ValidationError("deformation must map the grid into R^n")
        if not np.all(np.isfinite(values)):
            raise NonFinite("deformation has non-finite entries")
        self.values = values
        self._grad = self.domain.gradient(values)

    @property
    def grad(self) -> np.ndarray:
        """``[..., s, i] = d_i xi^s``."""
        return self._grad

    @classmethod
    def from_function(cls, domain: GridDomain, fn) -> "DeformationField":
        return cls(domain, fn(domain.points))

    @classmethod
    def affine(cls, domain: GridDomain, A, b=None) -> "DeformationField":
        A = np.asarray(A, dtype=float)
        vals = np.einsum("si,...i->...s", A, domain.points)
        if b is not None:
            vals = vals + np.asarray(b, dtype=float)
        return cls(domain, vals)
