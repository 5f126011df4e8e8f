"""Weighted eigenproblem ``-Lap e = mu |omega|^(q-2) e`` and the linearized operator.

Eigenpairs are indexed from 1 as in the mathematics (``S.eig(2)`` is the
pair with the second smallest ``mu``).  Nodes where the weight vanishes are
eliminated by a Schur complement: on them ``-Lap e = 0`` holds exactly, which
keeps every eigenvector ``H10``-orthogonal to fields supported on the zero set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.linalg import eigh, solve

from .functionals import ZERO_TOL
from .grid import H10, DualField, Field, GridSpec, apply_neg_laplacian, hm1_norm, inner_product, stiffness_matrix

__all__ = [
    "EigenPair",
    "Spectrum",
    "SpectrumError",
    "weighted_spectrum",
    "spectral_project",
    "maxmin_eigen_oracle",
    "operator_norm_L_inverse",
    "CLUSTER_TOL",
]

CLUSTER_TOL = 1e-6


class SpectrumError(ValueError):
    pass


@dataclass(frozen=True)
class EigenPair:
    mu: float
    nu: float
    e: Field


@dataclass(frozen=True)
class Spectrum:
    weight: Field
    q: float
    pairs: list = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.pairs)

    @property
    def mus(self) -> np.ndarray:
        return np.array([p.mu for p in self.pairs])

    @property
    def nus(self) -> np.ndarray:
        return np.array([p.nu for p in self.pairs])

    def eig(self, j: int) -> EigenPair:
        if not 1 <= j <= self.count:
            raise IndexError(f"eigen index {j} outside 1..{self.count}")
        return self.pairs[j - 1]

    def first_positive_index(self) -> int:
        """1-based index of the least positive shifted eigenvalue."""
        pos = np.flatnonzero(self.nus > 0)
        if pos.size == 0:
            raise SpectrumError("no positive shifted eigenvalue among computed pairs")
        return int(pos[0]) + 1

    def least_positive_nu(self) -> float:
        return float(self.nus[self.first_positive_index() - 1])

    def to_rows(self):
        return [(j + 1, p.mu, p.nu) for j, p in enumerate(self.pairs)]

    def to_json(self) -> dict:
        return {"q": self.q, "count": self.count, "mu": self.mus.tolist(), "nu": self.nus.tolist()}


def _weight(q: float, omega: Field, zero_tol: float):
    w = np.abs(omega.values)
    scale = w.max()
    if scale == 0.0:
        raise SpectrumError("weight is identically zero")
    mask = w > zero_tol * scale
    return w ** (q - 2.0), mask


def _orient(v: np.ndarray) -> np.ndarray:
    big = np.flatnonzero(np.abs(v) > 1e-3 * np.abs(v).max())
    return -v if v[big[0]] < 0 else v


def weighted_spectrum(
    g: GridSpec, q: float, omega: Field, count: int, zero_tol: float = ZERO_TOL
) -> Spectrum:
    if omega.grid != g:
        raise ValueError("weight does not live on the given grid")
    d, mask = _weight(q, omega, zero_tol)
    P = np.flatnonzero(mask)
    Z = np.flatnonzero(~mask)
    if not 1 <= count <= P.size:
        raise SpectrumError(f"count {count} outside 1..{P.size} (positive-weight nodes)")
    K = stiffness_matrix(g)
    S = K[np.ix_(P, P)]
    if Z.size:
        coupling = solve(K[np.ix_(Z, Z)], K[np.ix_(Z, P)], assume_a="pos")
        S = S - K[np.ix_(P, Z)] @ coupling
    isq = 1.0 / np.sqrt(d[P])
    M = isq[:, None] * S * isq[None, :]
    _, Y = eigh(M, subset_by_index=[0, count - 1])
    shift = (q - 1.0) ** 2 / (q - 2.0)
    pairs = []
    for j in range(count):
        e = np.zeros(g.n)
        e[P] = isq * Y[:, j]
        if Z.size:
            e[Z] = -coupling @ e[P]
        ef = Field(g, _orient(e))
        ef = ef / np.sqrt(inner_product(g, ef, ef, H10))
        # Rayleigh quotient: quadratically accurate in the eigenvector error
        mu = 1.0 / (g.h * np.sum(d * ef.values**2))
        pairs.append(EigenPair(mu, mu - shift, ef))
    pairs.sort(key=lambda p: p.mu)
    return Spectrum(omega, q, pairs)


def eigen_residual(S: Spectrum, j: int) -> float:
    """Relative ``Hm1`` residual of ``-Lap e - mu |omega|^(q-2) e``."""
    p = S.eig(j)
    g = p.e.grid
    lhs = apply_neg_laplacian(g, p.e)
    rhs = DualField(g, p.mu * np.abs(S.weight.values) ** (S.q - 2.0) * p.e.values)
    return hm1_norm(lhs - rhs) / hm1_norm(lhs)


def spectral_project(S: Spectrum, cluster: Iterable[int], f: Field) -> Field:
    """``H10``-orthogonal projection of ``f`` onto the span of the cluster's eigenvectors."""
    idx = list(cluster)
    if not idx:
        raise ValueError("empty cluster")
    mus = np.array([S.eig(j).mu for j in idx])
    if mus.max() - mus.min() > CLUSTER_TOL * mus.max():
        raise SpectrumError(f"cluster {idx} straddles distinct eigenvalues {mus}")
    g = f.grid
    out = np.zeros(g.n)
    for j in idx:
        e = S.eig(j).e
        out += inner_product(g, f, e, H10) * e.values
    return Field(g, out)


def projection_coefficient(S: Spectrum, j: int, f: Field) -> float:
    return inner_product(f.grid, f, S.eig(j).e, H10)


@dataclass(frozen=True)
class MaxMinReport:
    j: int
    target: float
    span_value: float
    span_error: float
    worst_random_margin: float
    trials: int
    passed: bool


def _restricted_inf(g: GridSpec, K: np.ndarray, d: np.ndarray, basis: np.ndarray) -> float:
    """``inf { h sum(d w^2) : w in span(basis), ||w||_H10 = 1 }``."""
    stiff = g.h * basis.T @ K @ basis
    mass = g.h * basis.T @ (d[:, None] * basis)
    return float(eigh(mass, stiff, eigvals_only=True)[0])


def maxmin_eigen_oracle(
    g: GridSpec, q: float, omega: Field, j: int, trials: int = 50, seed: int = 0, tol: float = 1e-10
) -> MaxMinReport:
    """Check the max-min value ``1/mu_j`` against the spanning subspace and random subspaces."""
    extra = min(j + 2, g.n)
    S = weighted_spectrum(g, q, omega, extra)
    target = 1.0 / S.eig(j).mu
    K = stiffness_matrix(g)
    d = np.abs(omega.values) ** (q - 2.0)
    E = np.column_stack([S.eig(i).e.values for i in range(1, extra + 1)])
    span_value = _restricted_inf(g, K, d, E[:, :j])
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for t in range(trials):
        # alternate smooth subspaces (near-optimal, the sharp test) with rough nodal ones
        if t % 2 == 0:
            Y = E @ rng.standard_normal((extra, j))
        else:
            Y = rng.standard_normal((g.n, j))
        worst = max(worst, _restricted_inf(g, K, d, Y) - target)
    span_error = abs(span_value - target)
    passed = span_error <= tol * max(1.0, target) and worst <= tol
    return MaxMinReport(j, target, span_value, span_error, float(worst), trials, bool(passed))


def operator_norm_L_inverse(g: GridSpec, q: float, omega: Field, degenerate_tol: float = 1e-10) -> float:
    """Norm of ``L_omega^-1`` from ``Hm1`` to ``H10``.

    With ``L = K - lambda_q (q-1) D`` and the pencil ``L x = theta K x``,
    the norm is ``max 1/|theta|``.
    """
    K = stiffness_matrix(g)
    c = (q - 1.0) ** 2 / (q - 2.0)
    d = np.abs(omega.values) ** (q - 2.0)
    if not np.any(d):
        return 1.0
    L = K - c * np.diag(d)
    theta = eigh(L, K, eigvals_only=True)
    small = np.min(np.abs(theta))
    if small <= degenerate_tol:
        raise SpectrumError(f"linearized operator is (numerically) degenerate: |theta| = {small:.3e}")
    return float(1.0 / small)
