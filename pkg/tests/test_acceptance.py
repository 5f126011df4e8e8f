"""Acceptance gate: one PASS/FAIL line per criterion, printed and collected for the terminal summary."""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from fdx.experiments import (
    ExperimentConfig,
    Lab,
    eigen_tracking,
    extinction_experiment,
    gradient_ratio_track,
    optimality_experiment,
    rate_experiment,
    taylor_check,
    w2_ode_check,
    well_prepared_search,
)
from fdx.functionals import Functionals
from fdx.grid import build_grid, h10_norm, hm1_norm
from fdx.profiles import build_profile
from fdx.spectrum import maxmin_eigen_oracle, weighted_spectrum

pytestmark = pytest.mark.slow


def record(num, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig()


@pytest.fixture(scope="module")
def lab(cfg):
    return Lab(cfg)


@pytest.fixture(scope="module")
def rate_timed(cfg, lab):
    t0 = time.perf_counter()
    res = rate_experiment(cfg, lab)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def optimality(cfg, lab):
    return optimality_experiment(cfg, lab)


@pytest.fixture(scope="module")
def e2_run(cfg, lab):
    _, traj = lab.perturbed_run(cfg.epsilon, eig_stride=cfg.eig_stride)
    return traj


@pytest.fixture(scope="module")
def w2_report(cfg, lab):
    return w2_ode_check(cfg, lab)


@pytest.fixture(scope="module")
def prepared_timed(cfg, lab):
    """Two well-prepared searches: the symmetric ``e3`` direction (root at alpha = 0 by reflection
    symmetry) and a mixed ``e3 + e4`` direction whose root is nontrivial."""
    out = []
    S = lab.spectrum
    for eta in (cfg.wp_delta * S.eig(3).e, (cfg.wp_delta / math.sqrt(2.0)) * (S.eig(3).e + S.eig(4).e)):
        t0 = time.perf_counter()
        rep = well_prepared_search(cfg, lab, eta)
        out.append((rep, time.perf_counter() - t0))
    return out


@pytest.fixture(scope="module")
def extinction(cfg, lab):
    return extinction_experiment(cfg, lab).report


def test_01_g_identity():
    g = build_grid(math.pi, 200)
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for q in (2.5, 3.0, 4.0):
        F = Functionals(q, g)
        for _ in range(100):
            w = g.field(rng.standard_normal(g.n) * rng.uniform(0.1, 3.0))
            G = F.coercive_G(w)
            worst = max(worst, abs(G - 0.5 * hm1_norm(F.grad_J(w)) ** 2) / (1.0 + abs(G)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 1.0
    assert record(1, "G-identity", ok, f"worst rel {worst:.2e} (tol 1e-10), {dt:.2f}s (< 1s)")


def test_02_constant_weight_spectrum():
    t0 = time.perf_counter()
    g = build_grid(math.pi, 400)
    S = weighted_spectrum(g, 3.0, g.field(np.ones(g.n)), 5)
    err = max(abs(S.eig(j).mu - j * j) / (j * j) for j in range(1, 6))
    dt = time.perf_counter() - t0
    ok = err <= 1e-3 and dt < 1.0
    assert record(2, "constant-weight spectrum", ok, f"max |mu_j - j^2|/j^2 = {err:.2e} (tol 1e-3), {dt:.2f}s")


def test_03_profile_eigen_consistency():
    t0 = time.perf_counter()
    g = build_grid(math.pi, 400)
    phi = build_profile(g, 3.0, 1)
    F = Functionals(3.0, g)
    S = weighted_spectrum(g, 3.0, phi.field, 8)
    err = abs(S.eig(1).mu - F.lambda_q)
    neg = int(np.count_nonzero(S.nus < 0))
    dt = time.perf_counter() - t0
    ok = err <= 1e-8 and neg == 1 and S.first_positive_index() == 2 and dt < 5.0
    assert record(3, "profile eigen-consistency", ok,
                  f"|mu_1 - lambda_q| = {err:.2e}, negative nu count {neg}, k = {S.first_positive_index()}, {dt:.2f}s")


def test_04_discrete_stationarity():
    g = build_grid(math.pi, 400)
    worst = 0.0
    for q in (2.5, 3.0, 4.0):
        F = Functionals(q, g)
        for k in (1, 2, 3):
            p = build_profile(g, q, k)
            worst = max(worst, hm1_norm(F.grad_J(p.field)) / h10_norm(p.field))
    assert record(4, "discrete stationarity", worst <= 1e-10, f"max ||J'||/||phi|| = {worst:.2e} (tol 1e-10)")


def test_05_extinction_time(extinction):
    lbs = extinction["lower_bounds"]
    ok = (abs(extinction["t_star_phi"] - 1.0) <= 1e-3 and abs(extinction["t_star_2phi"] - 2.0) <= 2e-3
          and len(lbs) == 20 and all(b["ok"] for b in lbs))
    margin = min(b["t_star"] / b["lower_bound"] for b in lbs)
    assert record(5, "extinction time", ok,
                  f"t*(phi) = {extinction['t_star_phi']:.9f}, t*(2phi) = {extinction['t_star_2phi']:.9f}, "
                  f"min t*/bound over {len(lbs)} data = {margin:.3f}")


def test_06_extinction_exponent(extinction):
    exps = extinction["exponents"]
    ok = {e["q"] for e in exps} == {2.5, 3.0} and all(e["rel_error"] <= 0.05 for e in exps)
    detail = ", ".join(f"q={e['q']}: {e['exponent']:.4f} vs {e['target']:.4f}" for e in exps)
    assert record(6, "extinction exponent", ok, detail)


def test_07_dissipation(optimality, rate_timed, e2_run, w2_report, prepared_timed, lab):
    checks = [rate_timed[0].report["dissipation"], e2_run.check_dissipation(), lab.floor().check_dissipation()]
    checks += [r["dissipation"] for r in optimality.report["runs"]]
    checks += w2_report["dissipation"]
    for rep, _ in prepared_timed:
        checks += list(rep["dissipation"].values())
    worst = {key: max(c[key] for c in checks) for key in ("max_J_increase", "max_K_increase", "max_eneq_violation")}
    ok = all(c["ok"] for c in checks)
    assert record(7, "dissipation", ok,
                  f"{len(checks)} trajectories, worst slack-adjusted increases "
                  + ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))


def test_08_sharp_rate(rate_timed, lab):
    res, dt = rate_timed
    fits = res.report["fits"]
    lam0 = lab.lambda0
    errs = {n: abs(-fits[n]["slope"] / lam0 - 1.0) for n in ("J_gap", "relative_entropy")}
    ok = res.report["conclusive"] and all(e <= 0.03 for e in errs.values()) and dt <= 600
    assert record(8, "sharp rate", ok,
                  f"lambda0 = {lam0:.5f}, J-gap slope {fits['J_gap']['slope']:.5f}, "
                  f"entropy slope {fits['relative_entropy']['slope']:.5f}, {dt:.1f}s")


def test_09_prefactor_scaling(optimality):
    rows = optimality.report["prefactor_scaling"]
    ok = all(r["rel_error"] <= 0.10 for r in rows)
    detail = ", ".join(f"eps={r['epsilon']:g}: {r['observed_ratio']:.4f}/{r['predicted_ratio']:g}" for r in rows)
    assert record(9, "prefactor scaling", ok, detail)


def test_10_gradient_sharpness(e2_run, lab):
    rep = gradient_ratio_track(e2_run, lab)
    ok = rep.get("late_rel_error", math.inf) <= 0.05 and rep.get("eps_reg_max_rel_dev", math.inf) <= 0.01
    assert record(10, "gradient-inequality sharpness", ok,
                  f"late ratio rel err {rep.get('late_rel_error', math.nan):.2e}, "
                  f"eps-reg deviation {rep.get('eps_reg_max_rel_dev', math.nan):.2e}")


def test_11_eigen_tracking(e2_run, lab):
    rep = eigen_tracking(e2_run, lab)
    ok = rep["passed"] and math.isfinite(rep["C_fit"])
    assert record(11, "eigenvalue tracking", ok,
                  f"C_fit {rep['C_fit']:.3e} over {rep['usable_records']} records, trend-free {rep['trend_free']}, "
                  f"first-positive ok {rep['first_positive_index_ok']}, "
                  f"sup ||L_s^-1|| {rep['L_inv_norm_sup']:.4f} vs {rep['L_inv_norm_phi']:.4f}")


def test_12_taylor_order():
    exps = []
    for q in (2.5, 3.0, 4.0):
        c = ExperimentConfig(q=q, ds=min(5e-3, 0.5 * (q - 2) / (q - 1)))
        rep = taylor_check(c, Lab(c))
        exps.append((q, rep["exponent"], rep["required"]))
    ok = all(e >= r for _, e, r in exps)
    assert record(12, "Taylor order", ok, ", ".join(f"q={q}: {e:.3f} >= {r:.3f}" for q, e, r in exps))


def test_13_maxmin_oracle(lab):
    reps = [maxmin_eigen_oracle(lab.grid, 3.0, lab.phi, j, trials=50, seed=j) for j in range(1, 5)]
    ok = all(r.span_error <= 1e-10 and r.worst_random_margin <= 1e-10 and r.trials == 50 for r in reps)
    assert record(13, "max-min oracle", ok,
                  f"max span error {max(r.span_error for r in reps):.2e}, "
                  f"worst random margin {max(r.worst_random_margin for r in reps):.2e}")


def test_14_dual_parseval(lab):
    g = lab.grid
    S = weighted_spectrum(g, 3.0, lab.phi, g.n)
    E = np.array([p.e.values for p in S.pairs])
    rng = np.random.default_rng(14)
    worst = 0.0
    for _ in range(20):
        d = g.dual(rng.standard_normal(g.n))
        beta = g.h * E @ d.values
        lhs = lab.F.hs_prime_norm(d, lab.phi) ** 2
        worst = max(worst, abs(lhs / np.sum(beta**2 * S.mus) - 1.0))
    assert record(14, "dual Parseval", worst <= 1e-8, f"worst relative error {worst:.2e} on 20 fields (tol 1e-8)")


def test_15_w2_ode(w2_report):
    r = w2_report
    ok = r["linear_max_rel_error"] <= 0.02 and r["duhamel_halving_ratio"] <= 0.5
    assert record(15, "w2 ODE", ok,
                  f"linear-regime max rel error {r['linear_max_rel_error']:.2e}, "
                  f"Duhamel residual ratio under ds halving {r['duhamel_halving_ratio']:.4f}")


def test_16_faster_decay(prepared_timed):
    ok, parts = True, []
    for name, (rep, dt) in zip(("e3", "e3+e4"), prepared_timed):
        fit, gen = rep["fit"], rep["generic_fit"]
        ok &= (fit["conclusive"] and gen["conclusive"] and -fit["slope"] >= 0.95 * rep["predicted_fast_rate"]
               and fit["slope"] <= 1.2 * gen["slope"] and dt <= 1800)
        parts.append(f"{name}: alpha* {rep['alpha_star']:.3e} ({rep['secant_evaluations']} evals), "
                     f"slope {fit['slope']:.4f} vs 0.95 x {rep['predicted_fast_rate']:.4f}, "
                     f"generic {gen['slope']:.4f}, gap ratio ok {rep['spectral_gap_ratio_ok']}, {dt:.1f}s")
    assert record(16, "faster decay", ok, "; ".join(parts))
