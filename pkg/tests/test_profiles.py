import math

import numpy as np
import pytest

from fdx.functionals import Functionals
from fdx.grid import build_grid, h10_norm, hm1_norm, lq_norm
from fdx.profiles import (
    MAX_BUMPS,
    ProfileError,
    build_profile,
    newton_refine,
    shoot_bump,
    sign_changes,
    sobolev_constant,
)
from fdx.spectrum import weighted_spectrum


@pytest.mark.parametrize("q", [2.5, 3.0, 4.0])
def test_shoot_first_integral_and_symmetry(q):
    zero, path = shoot_bump(q, 1.0, 1e-3)
    drift = np.max(np.abs(path.first_integral / path.first_integral[0] - 1.0))
    assert drift <= 1e-8
    assert path.x[-1] == zero and path.phi[-1] == 0.0
    i = int(np.argmax(path.phi))
    assert path.x[i] == pytest.approx(zero / 2, abs=2e-3)
    # reflection: phi(x) = phi(zero - x)
    mirrored = np.interp(zero - path.x, path.x, path.phi)
    assert np.max(np.abs(mirrored - path.phi)) <= 1e-6


@pytest.mark.parametrize("q", [2.5, 3.0, 4.0])
def test_shoot_scaling_law(q):
    theta = 2.0
    z1, p1 = shoot_bump(q, 1.0, 1e-4)
    # phi_theta(x) = theta phi(theta^((q-2)/2) x) has slope theta^(q/2) at 0
    z2, p2 = shoot_bump(q, theta ** (q / 2), 1e-4)
    assert z2 == pytest.approx(z1 * theta ** (-(q - 2) / 2), rel=1e-8)
    assert p2.phi.max() == pytest.approx(theta * p1.phi.max(), rel=1e-6)


def test_shoot_rejects_bad_input():
    with pytest.raises(ValueError):
        shoot_bump(3.0, -1.0, 1e-3)
    with pytest.raises(ProfileError):
        shoot_bump(3.0, 1.0, 1e-3, horizon=0.1)


def test_sign_changes():
    assert sign_changes(np.array([1.0, 2.0, 0.0, -1.0, 3.0])) == 2
    assert sign_changes(np.zeros(4)) == 0


def test_k1_profile(phi3, F3):
    phi = phi3.field.values
    assert np.all(phi > 0)
    np.testing.assert_allclose(phi, phi[::-1], atol=1e-12)
    nrm = h10_norm(phi3.field)
    assert phi3.residual <= 1e-10 * nrm
    assert phi3.energy > 0
    assert phi3.iterations <= 10
    assert nrm**2 == pytest.approx(F3.lambda_q * lq_norm(F3.grid, phi3.field, 3.0) ** 3, rel=1e-10)


def test_k2_profile(grid400, phi3):
    p2 = build_profile(grid400, 3.0, 2)
    v = p2.field.values
    assert sign_changes(v) == 1
    np.testing.assert_allclose(v, -v[::-1], atol=1e-12)
    assert p2.energy > phi3.energy
    assert p2.residual <= 1e-10 * h10_norm(p2.field)


def test_scaled_profile_is_not_stationary(F3, phi3):
    assert F3.grad_norm_hm1(1.1 * phi3.field) >= 1e-3


def test_newton_refine_fixed_point_and_trivial(grid400, phi3):
    again = newton_refine(grid400, 3.0, phi3.field)
    assert again.iterations == 0
    np.testing.assert_array_equal(again.field.values, phi3.field.values)
    with pytest.raises(ProfileError):
        newton_refine(grid400, 3.0, grid400.zeros())


def test_bump_count_limits(grid400):
    with pytest.raises(ValueError):
        build_profile(grid400, 3.0, 0)
    with pytest.raises(ValueError):
        build_profile(grid400, 3.0, MAX_BUMPS + 1)


def test_nondegenerate(spec3):
    assert np.all(np.abs(spec3.nus) > 1e-6 * spec3.mus[0])


def test_sobolev_constant(grid400, phi3, rng):
    q = 3.0
    C = sobolev_constant(grid400, q)
    phi = phi3.field
    assert C == pytest.approx(lq_norm(grid400, phi, q) / h10_norm(phi), rel=1e-14)
    for c in (0.5, 3.0):
        assert lq_norm(grid400, c * phi, q) / h10_norm(c * phi) == pytest.approx(C, rel=1e-13)
    for _ in range(1000):
        w = grid400.field(rng.standard_normal(grid400.n) * np.sin(grid400.x) ** rng.integers(0, 3))
        assert lq_norm(grid400, w, q) <= C * h10_norm(w) * (1 + 1e-6)


def test_sobolev_constant_tends_to_poincare():
    g = build_grid(math.pi, 200)
    vals = [sobolev_constant(g, q) for q in (3.0, 2.5, 2.3, 2.2)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1.0 and 1.0 - vals[-1] < 1.0 - vals[0]


def test_profile_to_json(phi3):
    d = phi3.to_json()
    assert {"q", "L", "n", "k", "residual", "energy"} <= set(d)
    assert d["k"] == 1 and d["n"] == 400


@pytest.mark.parametrize("q,k", [(2.5, 3), (4.0, 2)])
def test_other_profiles_stationary(grid400, q, k):
    p = build_profile(grid400, q, k)
    F = Functionals(q, grid400)
    assert hm1_norm(F.grad_J(p.field)) <= 1e-10 * h10_norm(p.field)
    assert sign_changes(p.field.values) == k - 1
    # the profile is itself a weighted eigenfunction with mu = lambda_q, the k-th one
    S = weighted_spectrum(grid400, q, p.field, k)
    assert S.eig(k).mu == pytest.approx(F.lambda_q, rel=1e-8)
