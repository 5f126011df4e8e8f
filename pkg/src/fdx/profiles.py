"""Discrete stationary profiles ``-phi'' = lambda_q |phi|^(q-2) phi`` on ``(0, L)``.

A single bump is obtained by shooting from the left endpoint with a fixed
RK4 step; the ODE scaling ``phi_t(x) = t phi(t^((q-2)/2) x)`` moves its first
zero to ``L/k``; ``k`` copies with alternating signs are glued and sampled,
and damped Newton on the grid owns the final accuracy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .functionals import Functionals
from .grid import Field, GridSpec, h10_norm, hm1_norm, lq_norm

__all__ = [
    "Profile",
    "BumpPath",
    "ProfileError",
    "shoot_bump",
    "build_profile",
    "newton_refine",
    "sobolev_constant",
    "sign_changes",
]

log = logging.getLogger(__name__)

MAX_BUMPS = 8
NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50
MAX_HALVINGS = 30


class ProfileError(RuntimeError):
    pass


@dataclass(frozen=True)
class BumpPath:
    """Samples of one shot bump: positions, values and slopes."""

    x: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    first_integral: np.ndarray


@dataclass(frozen=True)
class Profile:
    field: Field
    q: float
    bump_count: int
    residual: float
    energy: float
    iterations: int = 0

    @property
    def grid(self) -> GridSpec:
        return self.field.grid

    def to_json(self) -> dict:
        g = self.grid
        return {
            "q": self.q,
            "L": g.length,
            "n": g.n,
            "k": self.bump_count,
            "residual": self.residual,
            "energy": self.energy,
            "newton_iterations": self.iterations,
        }


def _rhs(y, lam, q):
    return np.array([y[1], -lam * np.abs(y[0]) ** (q - 2.0) * y[0]])


def _rk4(y, dt, lam, q):
    k1 = _rhs(y, lam, q)
    k2 = _rhs(y + 0.5 * dt * k1, lam, q)
    k3 = _rhs(y + 0.5 * dt * k2, lam, q)
    k4 = _rhs(y + dt * k3, lam, q)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def shoot_bump(q: float, slope: float, step: float, horizon: float | None = None):
    """Integrate ``phi'' = -lambda_q |phi|^(q-2) phi`` from ``(0, slope)`` to the
    first return to zero.

    Returns ``(first_zero, path)``; the path ends exactly at the zero.
    """
    if slope <= 0 or step <= 0:
        raise ValueError("slope and step must be positive")
    lam = (q - 1.0) / (q - 2.0)
    if horizon is None:
        # generous multiple of the bump width implied by the scaling law
        horizon = 50.0 * slope ** (-(q - 2.0) / q) + 10.0 * step
    xs, ys = [0.0], [np.array([0.0, slope])]
    y = ys[0]
    x = 0.0
    while x < horizon:
        y_new = _rk4(y, step, lam, q)
        if y_new[0] <= 0.0 and x > 0.0:
            tau = brentq(lambda t: _rk4(y, t, lam, q)[0], 0.0, step, xtol=1e-15, rtol=1e-15)
            y_end = _rk4(y, tau, lam, q)
            y_end[0] = 0.0
            xs.append(x + tau)
            ys.append(y_end)
            break
        x += step
        xs.append(x)
        ys.append(y_new)
        y = y_new
    else:
        raise ProfileError(f"no zero crossing within horizon {horizon}")
    arr = np.array(ys)
    integral = 0.5 * arr[:, 1] ** 2 + lam / q * np.abs(arr[:, 0]) ** q
    path = BumpPath(np.array(xs), arr[:, 0], arr[:, 1], integral)
    return xs[-1], path


def sign_changes(values: np.ndarray) -> int:
    s = np.sign(values[values != 0.0])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def _glued_guess(g: GridSpec, q: float, k: int, steps_per_bump: int = 4000) -> Field:
    width = g.length / k
    x0, _ = shoot_bump(q, 1.0, 1.0 / steps_per_bump)
    theta = (x0 / width) ** (2.0 / (q - 2.0))
    slope = theta ** (q / 2.0)
    x1, path = shoot_bump(q, slope, width / steps_per_bump)
    spline = CubicHermiteSpline(path.x, path.phi, path.dphi)
    idx = np.minimum((g.x // width).astype(int), k - 1)
    local = g.x - idx * width
    vals = spline(np.clip(local * x1 / width, 0.0, x1))
    vals = np.where(idx % 2 == 0, vals, -vals)
    return Field(g, vals)


def _residual(F: Functionals, phi: Field):
    r = F.grad_J(phi)
    return r, hm1_norm(r)


def _newton_step(F: Functionals, phi: Field, r) -> np.ndarray:
    g = F.grid
    ab = np.empty((3, g.n))
    ab[0, 0] = ab[2, -1] = 0.0
    ab[0, 1:] = ab[2, :-1] = -1.0 / g.h**2
    ab[1, :] = 2.0 / g.h**2 - F.lambda_q * (F.q - 1.0) * np.abs(phi.values) ** (F.q - 2.0)
    return solve_banded((1, 1), ab, -r.values)


def newton_refine(g: GridSpec, q: float, guess: Field) -> Profile:
    """Damped Newton on ``-Lap phi - lambda_q |phi|^(q-2) phi = 0``.

    Once the residual is below ``NEWTON_TOL * ||phi||_H10`` a few undamped
    polishing steps are taken while they still halve the residual.
    """
    F = Functionals(q, g)
    phi = guess
    if h10_norm(phi) < 1e-8:
        raise ProfileError("guess is (numerically) the trivial solution")
    r, rn = _residual(F, phi)
    iterations = 0
    if rn > NEWTON_TOL * h10_norm(phi):
        while rn > NEWTON_TOL * h10_norm(phi):
            if iterations >= NEWTON_MAXIT:
                raise ProfileError(f"Newton did not converge: residual {rn:.3e}")
            step = _newton_step(F, phi, r)
            t = 1.0
            for _ in range(MAX_HALVINGS + 1):
                trial = Field(g, phi.values + t * step)
                r_t, rn_t = _residual(F, trial)
                if rn_t < rn:
                    break
                t *= 0.5
            else:
                raise ProfileError(f"damping failed at residual {rn:.3e}")
            phi, r, rn = trial, r_t, rn_t
            iterations += 1
            if h10_norm(phi) < 1e-8:
                raise ProfileError("Newton collapsed onto the trivial solution")
        for _ in range(3):
            trial = Field(g, phi.values + _newton_step(F, phi, r))
            r_t, rn_t = _residual(F, trial)
            if not rn_t < 0.5 * rn:
                break
            phi, r, rn = trial, r_t, rn_t
            iterations += 1
    log.debug("newton_refine: %d iterations, residual %.3e", iterations, rn)
    return Profile(phi, q, sign_changes(phi.values) + 1, rn, F.energy_J(phi), iterations)


def build_profile(g: GridSpec, q: float, k: int = 1) -> Profile:
    if not 1 <= k <= MAX_BUMPS:
        raise ValueError(f"bump count must be in 1..{MAX_BUMPS}, got {k}")
    if g.n < 4 * k:
        raise ValueError(f"{g.n} nodes cannot resolve {k} bumps")
    prof = newton_refine(g, q, _glued_guess(g, q, k))
    if prof.bump_count != k:
        raise ProfileError(f"refined profile has {prof.bump_count} bumps, expected {k}")
    if not prof.energy > 0:
        raise ProfileError("refined profile has nonpositive energy")
    return prof


def sobolev_constant(g: GridSpec, q: float) -> float:
    """Best discrete constant in ``||w||_q <= C ||w||_H10``."""
    phi = build_profile(g, q, 1).field
    return lq_norm(g, phi, q) / h10_norm(phi)
