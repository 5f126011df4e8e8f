import math

import numpy as np
import pytest

from fdx.functionals import Functionals
from fdx.grid import H10, build_grid, inner_product
from fdx.profiles import build_profile
from fdx.spectrum import (
    SpectrumError,
    eigen_residual,
    maxmin_eigen_oracle,
    operator_norm_L_inverse,
    projection_coefficient,
    spectral_project,
    weighted_spectrum,
)


def test_constant_weight_dirichlet_eigenvalues(grid400):
    S = weighted_spectrum(grid400, 3.0, grid400.field(np.ones(grid400.n)), 5)
    for j in range(1, 6):
        assert abs(S.eig(j).mu - j**2) / j**2 <= 1e-3


def test_profile_spectrum(spec3, F3, phi3):
    assert spec3.eig(1).mu == pytest.approx(F3.lambda_q, abs=1e-8)
    assert spec3.eig(1).nu == pytest.approx(F3.lambda_q * (2 - F3.q), abs=1e-8)
    assert np.count_nonzero(spec3.nus < 0) == 1
    assert spec3.first_positive_index() == 2
    e1 = spec3.eig(1).e.values
    assert np.all(e1 > 0)
    # e_1 is the normalized profile
    np.testing.assert_allclose(e1, phi3.field.values / math.sqrt(inner_product(F3.grid, phi3.field, phi3.field, H10)),
                               atol=1e-10)


def test_eigenpair_invariants(spec3, grid400):
    assert np.all(np.diff(spec3.mus) > 0)
    for i in range(1, spec3.count + 1):
        assert eigen_residual(spec3, i) <= 1e-8
        for j in range(1, spec3.count + 1):
            ip = inner_product(grid400, spec3.eig(i).e, spec3.eig(j).e, H10)
            assert ip == pytest.approx(float(i == j), abs=1e-10)


def test_spectrum_errors(grid400, phi3):
    with pytest.raises(SpectrumError):
        weighted_spectrum(grid400, 3.0, grid400.zeros(), 2)
    with pytest.raises(SpectrumError):
        weighted_spectrum(grid400, 3.0, phi3.field, grid400.n + 1)


def test_zero_weight_nodes_eliminated():
    g = build_grid(math.pi, 60)
    w = np.sin(g.x) ** 2
    w[25:30] = 0.0
    S = weighted_spectrum(g, 3.0, g.field(w), 4)
    for j in range(1, 5):
        assert eigen_residual(S, j) <= 1e-8
        assert inner_product(g, S.eig(j).e, S.eig(j).e, H10) == pytest.approx(1.0, abs=1e-12)


def test_projection(spec3, grid400, rng):
    e1, e2 = spec3.eig(1).e, spec3.eig(2).e
    np.testing.assert_allclose(spectral_project(spec3, [2], e2).values, e2.values, atol=1e-12)
    np.testing.assert_allclose(spectral_project(spec3, [2], e1 + e2).values, e2.values, atol=1e-12)
    assert projection_coefficient(spec3, 2, 3.0 * e2) == pytest.approx(3.0)
    for _ in range(100):
        f = grid400.field(rng.standard_normal(grid400.n))
        p = spectral_project(spec3, [3], f)
        pp = spectral_project(spec3, [3], p)
        assert np.max(np.abs(pp.values - p.values)) <= 1e-12 * max(1.0, np.max(np.abs(p.values)))


def test_projection_rejects_straddling_cluster(spec3):
    with pytest.raises(SpectrumError):
        spectral_project(spec3, [2, 3], spec3.eig(2).e)


@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_maxmin_oracle_profile_weight(grid400, phi3, j):
    rep = maxmin_eigen_oracle(grid400, 3.0, phi3.field, j, trials=50, seed=j)
    assert rep.passed
    assert rep.span_error <= 1e-10 and rep.worst_random_margin <= 1e-10


def test_maxmin_oracle_constant_weight(grid400):
    rep = maxmin_eigen_oracle(grid400, 3.0, grid400.field(np.ones(grid400.n)), 1)
    assert rep.passed and rep.target == pytest.approx(1.0, rel=1e-4)


def test_full_parseval(grid400, phi3, rng):
    S = weighted_spectrum(grid400, 3.0, phi3.field, grid400.n)
    E = np.array([p.e.values for p in S.pairs])
    K = Functionals(3.0, grid400)
    for _ in range(5):
        f = grid400.field(rng.standard_normal(grid400.n))
        coeff = np.array([inner_product(grid400, f, p.e, H10) for p in S.pairs])
        assert np.sum(coeff**2) == pytest.approx(inner_product(grid400, f, f, H10), rel=1e-10)
        d = grid400.dual(rng.standard_normal(grid400.n))
        beta = grid400.h * E @ d.values
        assert K.hs_prime_norm(d, phi3.field) ** 2 == pytest.approx(np.sum(beta**2 * S.mus), rel=1e-8)


def test_operator_norm(grid400, phi3, spec3):
    assert operator_norm_L_inverse(grid400, 3.0, grid400.zeros()) == pytest.approx(1.0)
    val = operator_norm_L_inverse(grid400, 3.0, phi3.field)
    # in 1D the extremal direction is an eigenvector: norm = max mu_j / |nu_j|
    assert val == pytest.approx(max(spec3.mus / np.abs(spec3.nus)), rel=1e-10)
    assert 1.0 / val <= min(np.abs(spec3.nus))


def test_operator_norm_refinement_stable():
    vals = []
    for n in (200, 400, 800):
        g = build_grid(math.pi, n)
        vals.append(operator_norm_L_inverse(g, 3.0, build_profile(g, 3.0).field))
    assert max(vals) / min(vals) - 1 <= 0.02


def test_operator_norm_detects_degeneracy(grid400):
    # weight with an eigenvalue exactly at the shift: constant weight c with mu_1 = 1/c^(q-2) = (q-1)^2/(q-2)
    q = 3.0
    c = (q - 2) / (q - 1) ** 2
    S = weighted_spectrum(grid400, q, grid400.field(np.full(grid400.n, 1.0)), 1)
    omega = grid400.field(np.full(grid400.n, S.eig(1).mu * c))
    with pytest.raises(SpectrumError):
        operator_norm_L_inverse(grid400, q, omega)


def test_serialization(spec3):
    rows = spec3.to_rows()
    assert rows[0][0] == 1 and rows[1][2] == pytest.approx(spec3.eig(2).nu)
    d = spec3.to_json()
    assert d["count"] == 8 and len(d["mu"]) == 8
