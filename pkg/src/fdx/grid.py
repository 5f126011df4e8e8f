"""Uniform 1D Dirichlet grid, discrete -Laplacian and the inner products built on it.

Grid functions live at the ``n`` interior nodes of ``(0, L)``; boundary values
are implicitly zero, so ``h * sum(f)`` is the trapezoid rule.  A ``DualField``
is a nodal representative of a functional acting through the pairing
``<d, f> = h * sum(d * f)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy.linalg import cholesky_banded, cho_solve_banded

__all__ = [
    "GridSpec",
    "Field",
    "DualField",
    "H10",
    "HM1",
    "L2w",
    "DegenerateWeightError",
    "build_grid",
    "apply_neg_laplacian",
    "solve_poisson",
    "inner_product",
    "pairing",
    "lq_norm",
    "h10_norm",
    "hm1_norm",
    "stiffness_matrix",
]


class DegenerateWeightError(ValueError):
    """A weighted norm with negative exponent met a nonzero value on the zero set."""


@dataclass(frozen=True)
class GridSpec:
    length: float
    n: int

    def __post_init__(self):
        if not np.isfinite(self.length) or self.length <= 0:
            raise ValueError(f"domain length must be positive, got {self.length}")
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"need at least 3 interior nodes, got {self.n}")

    @property
    def h(self) -> float:
        return self.length / (self.n + 1)

    @cached_property
    def x(self) -> np.ndarray:
        x = self.h * np.arange(1, self.n + 1)
        x.setflags(write=False)
        return x

    @cached_property
    def _chol(self) -> np.ndarray:
        # upper banded Cholesky factor of tridiag(-1, 2, -1) / h^2
        ab = np.empty((2, self.n))
        ab[0, 0] = 0.0
        ab[0, 1:] = -1.0 / self.h**2
        ab[1, :] = 2.0 / self.h**2
        return cholesky_banded(ab)

    def field(self, values) -> "Field":
        return Field(self, values)

    def dual(self, values) -> "DualField":
        return DualField(self, values)

    def sample(self, func) -> "Field":
        """Field with nodal values ``func(x)``."""
        return Field(self, func(self.x))

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.n))


def build_grid(length: float, n: int) -> GridSpec:
    return GridSpec(float(length), int(n))


class _GridFunction:
    __slots__ = ("grid", "values")
    # keep numpy scalars from broadcasting over us: np.float64(2) * f -> f.__rmul__
    __array_ufunc__ = None

    def __init__(self, grid: GridSpec, values):
        arr = np.array(values, dtype=np.float64)
        if arr.shape != (grid.n,):
            raise ValueError(f"expected {grid.n} nodal values, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid function values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, key, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    def _check(self, other):
        if not isinstance(other, type(self)):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("grid functions live on different grids")
        return other.values

    def __add__(self, other):
        vals = self._check(other)
        if vals is NotImplemented:
            return NotImplemented
        return type(self)(self.grid, self.values + vals)

    def __sub__(self, other):
        vals = self._check(other)
        if vals is NotImplemented:
            return NotImplemented
        return type(self)(self.grid, self.values - vals)

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        return type(self)(self.grid, float(c) * self.values)

    __rmul__ = __mul__

    def __truediv__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        return type(self)(self.grid, self.values / float(c))

    def __neg__(self):
        return type(self)(self.grid, -self.values)

    def __len__(self):
        return self.grid.n

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.grid.n}, max|.|={np.max(np.abs(self.values)):.3e})"


class Field(_GridFunction):
    """Primal grid function (element of discrete H^1_0)."""

    __slots__ = ()


class DualField(_GridFunction):
    """Nodal representative of a functional (element of discrete H^-1)."""

    __slots__ = ()


@dataclass(frozen=True)
class _Space:
    name: str


H10 = _Space("H10")
HM1 = _Space("Hm1")


@dataclass(frozen=True)
class L2w:
    """Weighted L^2 with weight ``|weight|**exponent`` (zero-set nodes excluded)."""

    weight: Field
    exponent: float
    zero_tol: float = field(default=1e-13)


Space = Union[_Space, L2w]


def _same_grid(g: GridSpec, *fs) -> None:
    for f in fs:
        if f.grid != g:
            raise ValueError("grid function does not live on the given grid")


def _neg_lap(values: np.ndarray, h: float) -> np.ndarray:
    p = np.concatenate(([0.0], values, [0.0]))
    return (2.0 * p[1:-1] - p[:-2] - p[2:]) / h**2


def apply_neg_laplacian(g: GridSpec, f: Field) -> DualField:
    _same_grid(g, f)
    return DualField(g, _neg_lap(f.values, g.h))


def solve_poisson(g: GridSpec, d: DualField) -> Field:
    _same_grid(g, d)
    return Field(g, cho_solve_banded((g._chol, False), d.values))


def stiffness_matrix(g: GridSpec) -> np.ndarray:
    """Dense tridiag(-1, 2, -1)/h^2, so that (a, b)_H10 = h * a @ K @ b."""
    k = 2.0 * np.eye(g.n) - np.eye(g.n, k=1) - np.eye(g.n, k=-1)
    return k / g.h**2


def pairing(d: DualField, f: Field) -> float:
    if d.grid != f.grid:
        raise ValueError("grid functions live on different grids")
    return float(d.grid.h * np.dot(d.values, f.values))


def _weight_mask(w: np.ndarray, zero_tol: float) -> np.ndarray:
    scale = np.max(np.abs(w))
    if scale == 0.0:
        return np.zeros(w.shape, dtype=bool)
    return np.abs(w) > zero_tol * scale


def inner_product(g: GridSpec, a, b, space: Space) -> float:
    _same_grid(g, a, b)
    if space == H10:
        if not (isinstance(a, Field) and isinstance(b, Field)):
            raise TypeError("H10 inner product takes two Fields")
        da = np.diff(np.concatenate(([0.0], a.values, [0.0])))
        db = np.diff(np.concatenate(([0.0], b.values, [0.0])))
        return float(np.dot(da, db) / g.h)
    if space == HM1:
        if not (isinstance(a, DualField) and isinstance(b, DualField)):
            raise TypeError("Hm1 inner product takes two DualFields")
        return pairing(a, solve_poisson(g, b))
    if isinstance(space, L2w):
        _same_grid(g, space.weight)
        w = space.weight.values
        mask = _weight_mask(w, space.zero_tol)
        av, bv = a.values, b.values
        if space.exponent < 0:
            off = ~mask
            if np.any(av[off] != 0.0) or np.any(bv[off] != 0.0):
                raise DegenerateWeightError(
                    "integrand is nonzero where the singular weight vanishes"
                )
        wp = np.abs(w[mask]) ** space.exponent
        return float(g.h * np.sum(av[mask] * bv[mask] * wp))
    raise TypeError(f"unknown space {space!r}")


def h10_norm(f: Field) -> float:
    return float(np.sqrt(inner_product(f.grid, f, f, H10)))


def hm1_norm(d: DualField) -> float:
    return float(np.sqrt(max(inner_product(d.grid, d, d, HM1), 0.0)))


def lq_norm(g: GridSpec, f, p: float) -> float:
    if p < 1:
        raise ValueError(f"Lq norm needs p >= 1, got {p}")
    _same_grid(g, f)
    return float((g.h * np.sum(np.abs(f.values) ** p)) ** (1.0 / p))
