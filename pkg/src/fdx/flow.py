"""Backward-Euler integration of the original and the rescaled fast-diffusion flow.

Rescaled:  d/ds (|v|^(q-2) v) = Lap v + lambda_q |v|^(q-2) v
Original:  d/dt (|u|^(q-2) u) = Lap u

Each step solves ``(1/ds - lambda) |v+|^(q-2) v+ - Lap v+ = m/ds`` for the
new state by damped Newton in ``v`` (``lambda = 0`` for the original
equation).  For ``ds < 1/lambda_q`` the Jacobian is symmetric positive
definite and the scheme dissipates ``J``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .functionals import Functionals, signed_power
from .grid import H10, DualField, Field, h10_norm, hm1_norm, inner_product, lq_norm, solve_poisson
from .io import write_csv
from .spectrum import Spectrum, weighted_spectrum

__all__ = [
    "FlowState",
    "Trajectory",
    "FlowError",
    "DissipationError",
    "ExtinctionBracketError",
    "step_rescaled",
    "step_original",
    "evolve_rescaled",
    "evolve_original",
    "estimate_extinction_time",
    "normalize_phase",
    "NEWTON_TOL",
    "DISSIPATION_SLACK",
]

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-14
NEWTON_MAXIT = 50
MAX_SUBDIVISIONS = 6
DISSIPATION_SLACK = 1e-8


class FlowError(RuntimeError):
    pass


class DissipationError(FlowError):
    pass


class ExtinctionBracketError(FlowError):
    pass


@dataclass(frozen=True)
class FlowState:
    s: float
    v: Field
    m: Field

    @classmethod
    def from_field(cls, F: Functionals, v: Field, s: float = 0.0) -> "FlowState":
        if not np.any(v.values):
            raise ValueError("flow state must be nontrivial")
        return cls(s, v, Field(v.grid, signed_power(v.values, F.q - 1.0)))


def _implicit(F: Functionals, m: np.ndarray, guess: np.ndarray, dt: float, lam: float) -> np.ndarray:
    coef = 1.0 / dt - lam
    if coef <= 0:
        raise FlowError(f"step {dt} too large: need ds < 1/lambda_q = {1.0 / lam:.4g}")
    v, _, status = _kernels.implicit_solve(
        m / dt, guess, F.q, coef, F.grid.h, NEWTON_TOL, NEWTON_MAXIT
    )
    if status != _kernels.CONVERGED:
        raise FlowError(f"Newton failed (status {status}) at step {dt:.3e}")
    return v


def _advance(F: Functionals, v: np.ndarray, dt: float, lam: float) -> np.ndarray:
    """One step of size ``dt``; on Newton failure retry with halved substeps."""
    for level in range(MAX_SUBDIVISIONS + 1):
        sub = 2**level
        try:
            w = v
            for _ in range(sub):
                w = _implicit(F, signed_power(w, F.q - 1.0), w, dt / sub, lam)
            if level:
                log.debug("step %.3e needed %d substeps", dt, sub)
            return w
        except FlowError:
            if level == MAX_SUBDIVISIONS:
                raise
    raise AssertionError("unreachable")


def step_rescaled(F: Functionals, state: FlowState, ds: float, check: bool = True) -> FlowState:
    if not 0.0 < ds < 1.0 / F.lambda_q:
        raise FlowError(f"step {ds} outside (0, 1/lambda_q = {1.0 / F.lambda_q:.4g})")
    v_new = _advance(F, state.v.values, ds, F.lambda_q)
    new = FlowState.from_field(F, Field(F.grid, v_new), state.s + ds)
    if check:
        j0, j1 = F.energy_J(state.v), F.energy_J(new.v)
        if j1 > j0 + DISSIPATION_SLACK * (1.0 + abs(j0)):
            raise DissipationError(f"energy increased by {j1 - j0:.3e} at s = {new.s:.4f}")
    return new


def step_original(F: Functionals, u: Field, dt: float) -> Field:
    if not np.any(u.values):
        return u
    return Field(F.grid, _advance(F, u.values, dt, 0.0))


def eneq_terms(F: Functionals, v_old: Field, v_new: Field, ds: float) -> tuple[float, float]:
    """``(lhs, rhs)`` of the discrete energy inequality for one step.

    lhs = 4(q-1)/q^2 * || (z+ - z)/ds ||_L2^2 * ds * (1 - lambda_q ds),
    rhs = J(v) - J(v+),  with  z = |v|^((q-2)/2) v.
    """
    dz = (F.half_power(v_new) - F.half_power(v_old)) / ds
    q = F.q
    lhs = 4.0 * (q - 1.0) / q**2 * F.grid.h * np.sum(dz * dz) * ds * (1.0 - F.lambda_q * ds)
    return float(lhs), float(F.energy_J(v_old) - F.energy_J(v_new))


# --- trajectories ----------------------------------------------------------

COLUMNS = (
    "s",
    "J",
    "K",
    "G",
    "J_gap",
    "h10_norm",
    "dist_H10_to_phi",
    "dist_Lq_to_phi",
    "relative_entropy",
    "grad_norm_Hm1",
    "grad_norm_Hs_prime",
    "w2_coeff",
    "eneq_lhs",
    "eneq_rhs",
)


@dataclass
class Trajectory:
    q: float
    ds: float
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list, repr=False)
    mu_head: list = field(default_factory=list, repr=False)

    def column(self, name: str) -> np.ndarray:
        if name not in COLUMNS:
            raise KeyError(f"unknown trajectory column {name!r}")
        return np.array([r[name] for r in self.records])

    @property
    def s(self) -> np.ndarray:
        return self.column("s")

    def __len__(self) -> int:
        return len(self.records)

    def check_dissipation(self, slack: float = DISSIPATION_SLACK) -> dict:
        """Largest per-record increases of ``J`` and ``K`` and the worst energy-inequality violation."""
        J, K = self.column("J"), self.column("K")
        out = {
            "max_J_increase": float(np.max(np.diff(J) - slack * (1.0 + np.abs(J[:-1])), initial=-np.inf)),
            "max_K_increase": float(np.max(np.diff(K) - slack * (1.0 + np.abs(K[:-1])), initial=-np.inf)),
        }
        lhs, rhs = self.column("eneq_lhs")[1:], self.column("eneq_rhs")[1:]
        out["max_eneq_violation"] = float(np.max(lhs - rhs - slack * (1.0 + np.abs(J[:-1])), initial=-np.inf))
        out["ok"] = all(v <= 0.0 for v in out.values())
        return out

    def write_csv(self, path) -> Path:
        return write_csv(path, COLUMNS, ([r[c] for c in COLUMNS] for r in self.records))


def _record(F: Functionals, s: float, v: Field, phi: Field | None, spec: Spectrum | None, eneq) -> dict:
    g = F.grid
    grad = F.grad_J(v)
    rec = {
        "s": s,
        "J": F.energy_J(v),
        "K": F.entropy_K(v),
        "G": F.coercive_G(v),
        "h10_norm": h10_norm(v),
        "grad_norm_Hm1": hm1_norm(grad),
        "eneq_lhs": eneq[0],
        "eneq_rhs": eneq[1],
        "J_gap": math.nan,
        "dist_H10_to_phi": math.nan,
        "dist_Lq_to_phi": math.nan,
        "relative_entropy": math.nan,
        "w2_coeff": math.nan,
    }
    try:
        rec["grad_norm_Hs_prime"] = F.hs_prime_norm(grad, v)
    except ValueError:
        rec["grad_norm_Hs_prime"] = math.nan
    if phi is not None:
        diff = v - phi
        rec["J_gap"] = F.energy_gap(v, phi)
        rec["dist_H10_to_phi"] = h10_norm(diff)
        rec["dist_Lq_to_phi"] = lq_norm(g, diff, F.q)
        rec["relative_entropy"] = F.relative_entropy(v, phi)
        if spec is not None and spec.count >= 2:
            w = solve_poisson(g, F.nonlinearity(v) - F.nonlinearity(phi))
            rec["w2_coeff"] = inner_product(g, w, spec.eig(2).e, H10)
    return rec


def evolve_rescaled(
    F: Functionals,
    v0: Field,
    S: float,
    ds: float,
    phi=None,
    spec: Spectrum | None = None,
    record_stride: int = 1,
    eig_stride: int | None = None,
    mu_count: int = 4,
    keep_snapshots: bool = True,
    check: bool = True,
) -> Trajectory:
    """March to horizon ``S`` recording diagnostics every ``record_stride`` steps.

    ``phi`` may be a ``Profile`` or a ``Field``.  With ``eig_stride`` set, the
    lowest ``mu_count`` weighted eigenvalues with weight ``v(s)`` are stored
    every ``eig_stride`` records in ``traj.mu_head`` as ``(s, mus)``.
    """
    phi_f = getattr(phi, "field", phi)
    nsteps = int(round(S / ds))
    state = FlowState.from_field(F, v0)
    traj = Trajectory(F.q, ds)

    def take(st, eneq):
        traj.records.append(_record(F, st.s, st.v, phi_f, spec, eneq))
        if keep_snapshots:
            traj.snapshots.append(st.v.values.copy())
        if eig_stride and (len(traj.records) - 1) % eig_stride == 0:
            sp = weighted_spectrum(F.grid, F.q, st.v, mu_count)
            traj.mu_head.append((st.s, sp.mus))

    take(state, (0.0, 0.0))
    lhs_acc = rhs_acc = 0.0
    for k in range(1, nsteps + 1):
        new = step_rescaled(F, state, ds, check=check)
        lhs, rhs = eneq_terms(F, state.v, new.v, ds)
        lhs_acc += lhs
        rhs_acc += rhs
        state = new
        if k % record_stride == 0:
            take(state, (lhs_acc, rhs_acc))
            lhs_acc = rhs_acc = 0.0
    return traj


def evolve_original(F: Functionals, u0: Field, T: float, dt: float, stop_fraction: float = 1e-6):
    """Backward Euler for the original equation up to ``T``.

    Stops early once ``||u||_H10`` falls below ``stop_fraction * ||u0||_H10``
    (the extinct regime is pure roundoff).  Returns ``(t, norms, u_last)``.
    """
    u = u0
    stop_norm = stop_fraction * h10_norm(u0)
    ts, norms = [0.0], [h10_norm(u0)]
    nsteps = int(round(T / dt))
    for k in range(1, nsteps + 1):
        u = step_original(F, u, dt)
        nrm = h10_norm(u)
        ts.append(k * dt)
        norms.append(nrm)
        if nrm <= stop_norm:
            break
    return np.array(ts), np.array(norms), u


# --- extinction time and phase normalization --------------------------------

@dataclass(frozen=True)
class ExtinctionSettings:
    ds: float = 5e-3
    horizon: float | None = None
    decay_factor: float = 0.1
    growth_factor: float = 10.0

    def horizon_for(self, tol: float) -> float:
        # the unstable direction grows like e^s, so resolving tol takes ~ln(1/tol)
        if self.horizon is not None:
            return self.horizon
        return 20.0 + math.log(1.0 / max(tol, 1e-17))


def _classify(F: Functionals, u0: np.ndarray, T: float, cfg: ExtinctionSettings, horizon: float) -> int:
    """-1 if ``T`` exceeds the extinction time, +1 if below, 0 if undecided at the horizon."""
    c = T ** (-1.0 / (F.q - 2.0))
    v0 = c * u0
    nrm = _kernels.h10_norm(v0, F.grid.h)
    nsteps = int(round(horizon / cfg.ds))
    _, _, flag, status = _kernels.rescaled_run(
        v0, F.q, F.lambda_q, cfg.ds, F.grid.h, nsteps, NEWTON_TOL, NEWTON_MAXIT,
        cfg.decay_factor * nrm, cfg.growth_factor * nrm,
    )
    if status != _kernels.CONVERGED:
        raise FlowError(f"Newton failed while classifying T = {T:.6g}")
    return int(flag)


def estimate_extinction_time(
    F: Functionals, u0: Field, tol: float = 1e-6, settings: ExtinctionSettings | None = None
) -> float:
    """Extinction time of ``u0`` by bisection on the rescaled flow.

    ``T`` is too large if the rescaled trajectory from ``T^(-1/(q-2)) u0``
    collapses, too small if it blows up.  Bisection stops when the bracket is
    narrower than ``tol * T``, when floating point cannot split it further, or
    when the horizon no longer separates the two behaviours.
    """
    cfg = settings or ExtinctionSettings()
    horizon = cfg.horizon_for(tol)
    if not np.any(u0.values):
        raise ValueError("extinction time of the zero datum is zero")
    u = u0.values
    T0 = F.rayleigh_extinction_bound(u0)
    lo = hi = None
    flag = _classify(F, u, T0, cfg, horizon)
    if flag == 0:
        # the lower bound is attained at profiles: probe a tol-bracket around it
        lo_t, hi_t = T0 * (1.0 - tol), T0 * (1.0 + tol)
        if _classify(F, u, lo_t, cfg, horizon) > 0 and _classify(F, u, hi_t, cfg, horizon) < 0:
            lo, hi = lo_t, hi_t
        else:
            raise ExtinctionBracketError(
                f"neither threshold reached within horizon {horizon:.3g}; increase the horizon"
            )
    elif flag < 0:
        hi = T0
        T = T0
        for _ in range(200):
            T = T / 2.0
            f = _classify(F, u, T, cfg, horizon)
            if f > 0:
                lo = T
                break
            if f == 0:
                raise ExtinctionBracketError(f"horizon {horizon} too short to bracket")
            hi = T
    else:
        lo = T0
        T = T0
        for _ in range(200):
            T = T * 2.0
            f = _classify(F, u, T, cfg, horizon)
            if f < 0:
                hi = T
                break
            if f == 0:
                raise ExtinctionBracketError(f"horizon {horizon} too short to bracket")
            lo = T
    if lo is None or hi is None:
        raise ExtinctionBracketError("could not bracket the extinction time")
    while hi - lo > tol * 0.5 * (lo + hi):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        flag = _classify(F, u, mid, cfg, horizon)
        if flag == 0:
            log.info("bisection resolved to horizon limit at width %.3e", hi - lo)
            return mid
        if flag < 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def normalize_phase(
    F: Functionals, u0: Field, tol: float = 1e-6, settings: ExtinctionSettings | None = None
) -> Field:
    """Project ``u0`` onto the phase set ``{t_* = 1}`` by scaling."""
    T = estimate_extinction_time(F, u0, tol, settings)
    return u0 * T ** (-1.0 / (F.q - 2.0))
