"""Energy, entropy and the weighted norms evaluated along the rescaled flow.

With ``lambda_q = (q-1)/(q-2)``:

    J(w) = 1/2 ||w||_H10^2 - (lambda_q/q) ||w||_q^q
    K(w) = (1/q') ||w||_q^q - (lambda_q/2) || |w|^(q-2) w ||_H-1^2
    G(w) = J(w) - lambda_q K(w) = 1/2 ||J'(w)||_H-1^2
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

from .grid import (
    HM1,
    DegenerateWeightError,
    DualField,
    Field,
    GridSpec,
    apply_neg_laplacian,
    h10_norm,
    hm1_norm,
    inner_product,
    H10,
    lq_norm,
    pairing,
)

__all__ = ["Functionals", "signed_power", "ZERO_TOL"]

ZERO_TOL = 1e-13


def signed_power(values: np.ndarray, p: float) -> np.ndarray:
    """``|v|^(p-1) v``; ``signed_power(v, q-1)`` is ``|v|^(q-2) v``."""
    return np.sign(values) * np.abs(values) ** p


def _power_difference(w: np.ndarray, phi: np.ndarray, q: float) -> np.ndarray:
    """``|w|^q - |phi|^q`` without cancellation when ``w`` is close to ``phi``."""
    out = np.abs(w) ** q - np.abs(phi) ** q
    same = (phi != 0.0) & (np.sign(w) == np.sign(phi))
    x = (w[same] - phi[same]) / phi[same]
    out[same] = np.abs(phi[same]) ** q * np.expm1(q * np.log1p(x))
    return out


@dataclass(frozen=True)
class Functionals:
    q: float
    grid: GridSpec

    def __post_init__(self):
        if not self.q > 2:
            raise ValueError(f"exponent q must exceed 2, got {self.q}")

    @property
    def lambda_q(self) -> float:
        return (self.q - 1.0) / (self.q - 2.0)

    @property
    def q_conj(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def rho(self) -> float:
        return min(self.q - 2.0, 1.0)

    # --- nodal maps -------------------------------------------------------

    def nonlinearity(self, w: Field) -> DualField:
        """``|w|^(q-2) w`` as a dual field."""
        return DualField(self.grid, signed_power(w.values, self.q - 1.0))

    def half_power(self, w: Field) -> np.ndarray:
        """``|w|^((q-2)/2) w``, the variable of the energy inequality."""
        return signed_power(w.values, self.q / 2.0)

    # --- functionals ------------------------------------------------------

    def energy_J(self, w: Field) -> float:
        return 0.5 * inner_product(self.grid, w, w, H10) - self.lambda_q / self.q * lq_norm(
            self.grid, w, self.q
        ) ** self.q

    def energy_gap(self, w: Field, phi: Field) -> float:
        """``J(w) - J(phi)`` evaluated without the O(1) cancellation."""
        g = self.grid
        xi = w - phi
        grad_part = 0.5 * inner_product(g, xi, xi, H10) + inner_product(g, phi, xi, H10)
        pot = g.h * np.sum(_power_difference(w.values, phi.values, self.q))
        return float(grad_part - self.lambda_q / self.q * pot)

    def grad_J(self, w: Field) -> DualField:
        return apply_neg_laplacian(self.grid, w) - self.lambda_q * self.nonlinearity(w)

    def entropy_K(self, w: Field) -> float:
        m = self.nonlinearity(w)
        return lq_norm(self.grid, w, self.q) ** self.q / self.q_conj - 0.5 * self.lambda_q * (
            inner_product(self.grid, m, m, HM1)
        )

    def coercive_G(self, w: Field) -> float:
        return self.energy_J(w) - self.lambda_q * self.entropy_K(w)

    def residual_R(self, w: Field, phi: Field) -> Field:
        q = self.q
        pv = phi.values
        r = (
            signed_power(w.values, q - 1.0)
            - signed_power(pv, q - 1.0)
            - (q - 1.0) * np.abs(pv) ** (q - 2.0) * (w.values - pv)
        )
        return Field(self.grid, r)

    def linearized_action(self, phi: Field, xi: Field) -> DualField:
        """``L_phi xi = -Lap xi - lambda_q (q-1) |phi|^(q-2) xi``."""
        c = self.lambda_q * (self.q - 1.0)
        return apply_neg_laplacian(self.grid, xi) - DualField(
            self.grid, c * np.abs(phi.values) ** (self.q - 2.0) * xi.values
        )

    # --- weighted norms ---------------------------------------------------

    def hs_prime_norm(self, f: DualField, v: Field, zero_tol: float = ZERO_TOL) -> float:
        """Norm of ``f`` in the space weighted by ``|v|^(2-q)``."""
        vv = np.abs(v.values)
        scale = vv.max()
        mask = vv > zero_tol * scale if scale > 0 else np.zeros_like(vv, dtype=bool)
        if np.any(f.values[~mask] != 0.0):
            raise DegenerateWeightError(
                "dual field does not vanish on the zero set of the weight"
            )
        return float(
            np.sqrt(self.grid.h * np.sum(f.values[mask] ** 2 * vv[mask] ** (2.0 - self.q)))
        )

    def eps_reg_norm(self, f: DualField, v: Field, eps: float) -> float:
        """``sqrt(<f, (-eps Lap + |v|^(q-2))^-1 f>)``."""
        if not eps > 0:
            raise ValueError(f"regularization must be positive, got {eps}")
        g = self.grid
        ab = np.empty((2, g.n))
        ab[0, 0] = 0.0
        ab[0, 1:] = -eps / g.h**2
        ab[1, :] = 2.0 * eps / g.h**2 + np.abs(v.values) ** (self.q - 2.0)
        x = solveh_banded(ab, f.values)
        return float(np.sqrt(max(g.h * np.dot(f.values, x), 0.0)))

    def relative_entropy(self, v: Field, phi: Field) -> float:
        d = v.values - phi.values
        return float(self.grid.h * np.sum(d * d * np.abs(phi.values) ** (self.q - 2.0)))

    # --- convenience ------------------------------------------------------

    def grad_norm_hm1(self, w: Field) -> float:
        return hm1_norm(self.grad_J(w))

    def rayleigh_extinction_bound(self, u: Field) -> float:
        """``lambda_q ||u||_q^q / ||u||_H10^2``, a lower bound for the extinction time."""
        return self.lambda_q * lq_norm(self.grid, u, self.q) ** self.q / h10_norm(u) ** 2

    def taylor_remainder(self, phi: Field, xi: Field) -> float:
        """``J(phi+xi) - J(phi) - 1/2 <L_phi xi, xi>``."""
        gap = self.energy_gap(phi + xi, phi)
        return gap - 0.5 * pairing(self.linearized_action(phi, xi), xi)
