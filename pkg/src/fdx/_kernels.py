"""Compiled inner loops for the implicit steppers.

Both the rescaled and the original equation reduce, per backward-Euler step,
to ``coef * |v|^(q-2) v + A v = rhs`` with ``A = tridiag(-1, 2, -1)/h^2`` and
``coef >= 0``; the Jacobian is then symmetric positive definite and the
Thomas algorithm needs no pivoting.
"""
import numpy as np
from numba import njit

CONVERGED = 0
NO_DESCENT = 1
MAX_ITER = 2


@njit(cache=True)
def _thomas(diag, off, rhs, out, cp, dp):
    n = diag.shape[0]
    cp[0] = off / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        den = diag[i] - off * cp[i - 1]
        cp[i] = off / den
        dp[i] = (rhs[i] - off * dp[i - 1]) / den
    out[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]


@njit(cache=True)
def _residual(v, rhs, q, coef, h, out):
    n = v.shape[0]
    ih2 = 1.0 / (h * h)
    acc = 0.0
    for i in range(n):
        left = v[i - 1] if i > 0 else 0.0
        right = v[i + 1] if i < n - 1 else 0.0
        a = abs(v[i])
        r = coef * a ** (q - 2.0) * v[i] + (2.0 * v[i] - left - right) * ih2 - rhs[i]
        out[i] = r
        acc += r * r
    return np.sqrt(acc)


@njit(cache=True)
def implicit_solve(rhs, guess, q, coef, h, tol, maxit):
    """Damped Newton for ``coef*|v|^(q-2)v + A v = rhs``.

    Returns ``(v, iterations, status)``.
    """
    n = rhs.shape[0]
    v = guess.copy()
    trial = np.empty(n)
    res = np.empty(n)
    res_t = np.empty(n)
    diag = np.empty(n)
    delta = np.empty(n)
    cp = np.empty(n)
    dp = np.empty(n)
    ih2 = 1.0 / (h * h)
    off = -ih2
    rnorm = _residual(v, rhs, q, coef, h, res)
    for it in range(maxit):
        vmax = 0.0
        for i in range(n):
            diag[i] = coef * (q - 1.0) * abs(v[i]) ** (q - 2.0) + 2.0 * ih2
            res[i] = -res[i]
            if abs(v[i]) > vmax:
                vmax = abs(v[i])
        _thomas(diag, off, res, delta, cp, dp)
        dmax = 0.0
        for i in range(n):
            if abs(delta[i]) > dmax:
                dmax = abs(delta[i])
        if dmax <= tol * vmax or dmax == 0.0:
            for i in range(n):
                v[i] += delta[i]
            return v, it + 1, CONVERGED
        t = 1.0
        accepted = False
        for _ in range(31):
            for i in range(n):
                trial[i] = v[i] + t * delta[i]
            rn = _residual(trial, rhs, q, coef, h, res_t)
            if rn < rnorm:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if dmax <= 1e-9 * vmax:
                # roundoff plateau: residual can no longer decrease measurably
                for i in range(n):
                    v[i] += delta[i]
                return v, it + 1, CONVERGED
            return v, it + 1, NO_DESCENT
        for i in range(n):
            v[i] = trial[i]
            res[i] = res_t[i]
        rnorm = rn
    return v, maxit, MAX_ITER


@njit(cache=True)
def signed_power(v, p):
    out = np.empty_like(v)
    for i in range(v.shape[0]):
        a = abs(v[i])
        out[i] = a ** p * (1.0 if v[i] > 0 else (-1.0 if v[i] < 0 else 0.0))
    return out


@njit(cache=True)
def h10_norm(v, h):
    n = v.shape[0]
    acc = v[0] * v[0] + v[n - 1] * v[n - 1]
    for i in range(n - 1):
        d = v[i + 1] - v[i]
        acc += d * d
    return np.sqrt(acc / h)


@njit(cache=True)
def rescaled_run(v0, q, lam, ds, h, nsteps, tol, maxit, low, high):
    """March the rescaled flow until ``nsteps`` or until ``||v||_H10`` leaves
    ``[low, high]``.  Used by the extinction-time bisection.

    Returns ``(v, steps_taken, exit_flag, status)`` where ``exit_flag`` is
    -1 (decayed below ``low``), +1 (grew above ``high``) or 0.
    """
    coef = 1.0 / ds - lam
    v = v0.copy()
    for k in range(nsteps):
        rhs = signed_power(v, q - 1.0) / ds
        v_new, it, status = implicit_solve(rhs, v, q, coef, h, tol, maxit)
        if status != CONVERGED:
            return v, k, 0, status
        v = v_new
        nrm = h10_norm(v, h)
        if nrm < low:
            return v, k + 1, -1, CONVERGED
        if nrm > high:
            return v, k + 1, 1, CONVERGED
    return v, nsteps, 0, CONVERGED
