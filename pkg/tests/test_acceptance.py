"""Acceptance criteria 1-11, each at its stated tolerance and time budget.

Every check is recorded; the terminal summary prints one PASS/FAIL line per
criterion. The two default studies (m = 20 and m = 100, 10^4 trials, seed 1)
run once per session and are shared by criteria 3, 8, 10 and 11.
"""

import math
import time

import numpy as np
import pytest

from sqrtsae import ModelParameters, shrinkage_profile
from sqrtsae import predictors as pred
from sqrtsae.cli import load_config, main, write_table2
from sqrtsae.estimation import pr_arrays, yl_arrays
from sqrtsae.model import AreaObservation, derive_profile
from sqrtsae.numerics import cubic_roots
from sqrtsae.simulation import ScenarioConfig, generate_scenario, run_study, run_trial

from conftest import TABLE1_B, TABLE1_XBETA_SQ

pytestmark = pytest.mark.slow

N_RANDOM = 10_000


def acceptance(n):
    return pytest.mark.acceptance(n)


def _random_inputs(seed, n=N_RANDOM, q_zero=False):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.01, 2.0, n)
    q = np.zeros(n) if q_zero else rng.uniform(1e-3, 2.0, n)
    xb = rng.uniform(-30.0, 30.0, n)
    return a, q, xb


@pytest.fixture(scope="session")
def default_studies():
    """The default scenario at m = 20 and m = 100, timed."""
    t0 = time.perf_counter()
    results = {cfg.m: run_study(cfg) for cfg in load_config("table2")}
    return results, time.perf_counter() - t0


# ---------------------------------------------------------------------------


@acceptance(1)
def test_c1_closed_form_at_w1(criterion):
    rec = criterion(1)
    t0 = time.perf_counter()
    a, q, xb = _random_inputs(101)
    got = pred.mspe_value(1.0, xb, a, q)
    err = float(np.max(np.abs(got - (xb ** 2 + a + 0.125))))
    elapsed = time.perf_counter() - t0
    rec.check("mspe(w=1) = xbeta^2 + a + 1/8", err <= 1e-12, f"max abs err {err:.2e}")
    rec.check("runtime < 1 s", elapsed < 1.0, f"{elapsed:.2f} s")
    rec.verify()


@acceptance(2)
def test_c2_six_term_oracle(criterion):
    rec = criterion(2)
    t0 = time.perf_counter()
    a, q, xb = _random_inputs(102)
    w = np.random.default_rng(202).uniform(0, 1, N_RANDOM)
    worst = 0.0
    for i in range(N_RANDOM):
        params = ModelParameters(a[i], [1.0])
        prof = shrinkage_profile(a[i], q[i], 1.0)
        total = math.fsum(pred.mspe_oracle_terms(w[i], xb[i], params, prof))
        closed = pred.mspe_theoretical(w[i], xb[i], params, prof)
        worst = max(worst, abs(total - closed) / abs(closed))
    elapsed = time.perf_counter() - t0
    rec.check("six-term sum = closed form", worst <= 1e-10, f"max rel err {worst:.2e}")
    rec.check("runtime < 1 s", elapsed < 1.0, f"{elapsed:.2f} s")
    rec.verify()


@acceptance(3)
def test_c3_monte_carlo_agreement(criterion, default_studies):
    rec = criterion(3)
    results, elapsed = default_studies
    worst_bias = worst_mspe = 0.0
    bad = []
    for m, res in results.items():
        for t in (10, 100):
            for name in ("direct", "proposed", "b_substitute", "optimal", "bp"):
                s = res.summary(name, t)
                zb = abs(s.empirical_bias - s.theoretical_bias) / s.bias_standard_error
                zm = abs(s.empirical_mspe - s.theoretical_mspe) / s.mc_standard_error
                worst_bias, worst_mspe = max(worst_bias, zb), max(worst_mspe, zm)
                if zb > 3 or zm > 3:
                    bad.append(f"{name} m={m} t={t} ({zb:.2f}, {zm:.2f} SE)")
    rec.check(
        "bias and eMSPE within 3 SE",
        not bad,
        "; ".join(bad) or f"max {worst_bias:.2f} SE (bias), {worst_mspe:.2f} SE (MSPE)",
    )
    rec.check("runtime < 1 min", elapsed < 60, f"{elapsed:.1f} s for both studies")
    rec.verify()


def _table1_setup(t):
    params = ModelParameters(0.2, [1.0])
    return params, shrinkage_profile(0.2, TABLE1_B, t)


@acceptance(4)
def test_c4_bayes_mspe(criterion):
    rec = criterion(4)
    got = float(pred.mspe_value(1 - 5 / 9, math.sqrt(TABLE1_XBETA_SQ), 0.2, 0.0))
    rec.check("BP MSPE 173.4032 within 0.1%", abs(got / 173.4032 - 1) <= 1e-3, f"{got:.5f}")
    rec.verify()


@acceptance(4)
def test_c4_proposed_weight(criterion):
    rec = criterion(4)
    params, prof = _table1_setup(10)
    got = pred.proposed_weight(prof)
    rec.check("proposed weight 0.7746453 within 5e-5", abs(got - 0.7746453) <= 5e-5, f"{got:.7f}")
    rec.verify()


@acceptance(4)
def test_c4_optimal_weight(criterion):
    rec = criterion(4)
    t0 = time.perf_counter()
    params, prof = _table1_setup(10)
    got, _ = pred.optimal_weight(math.sqrt(TABLE1_XBETA_SQ), params, prof)
    rec.check(
        "optimal weight 0.7747139 within 5e-5",
        abs(got - 0.7747139) <= 5e-5,
        f"{got:.7f}, off by {abs(got - 0.7747139):.2e}",
    )
    rec.check("runtime < 1 s", time.perf_counter() - t0 < 1.0)
    rec.verify()


@acceptance(4)
def test_c4_b_substitute_bias(criterion):
    rec = criterion(4)
    for t, want in ((10, 0.2036), (100, 0.0203)):
        params, prof = _table1_setup(t)
        got = pred.b_substitute_bias(params, prof)
        rec.check(f"B-substitute bias {want} (t={t}) within 1%", abs(got / want - 1) <= 0.01, f"{got:.6f}")
    rec.verify()


@acceptance(5)
def test_c5_optimal_weight(criterion):
    rec = criterion(5)
    t0 = time.perf_counter()
    a, q, xb = _random_inputs(105)
    w0, best = pred.optimal_weights(xb, a, q)
    grid = np.linspace(0.0, 1.0, 10_001)
    not_min = far = 0
    for lo in range(0, N_RANDOM, 250):
        sl = slice(lo, lo + 250)
        vals = pred.mspe_value(grid[None, :], xb[sl, None], a[sl, None], q[sl, None])
        j = np.argmin(vals, axis=1)
        not_min += int(np.sum(best[sl] > vals.min(axis=1) * (1 + 1e-12)))
        far += int(np.sum(np.abs(w0[sl] - grid[j]) > 1e-4))
    rec.check("grid search confirms w0", not_min == 0 and far == 0, f"{not_min} worse than grid, {far} off-grid")

    c = np.stack(pred.mspe_derivative_cubic(xb, a, q))
    g = lambda w: ((c[0] * w + c[1]) * w + c[2]) * w + c[3]
    interior = (w0 > 0) & (w0 < 1)
    resid = float(np.max(np.abs(g(w0)[interior])))
    rec.check("|g(w0)| <= 1e-10 at interior roots", resid <= 1e-10, f"max {resid:.1e} over {interior.sum()} roots")

    a0, q0, xb0 = _random_inputs(205, q_zero=True)
    w_b0, _ = pred.optimal_weights(xb0, a0, q0)
    exact = [w == 1.0 - ModelParameters(ai, [1.0]).big_b for w, ai in zip(w_b0, a0)]
    rec.check("b = 0 gives w0 = 1 - B exactly", all(exact), f"{N_RANDOM - sum(exact)} mismatches")

    one_minus_gamma = 1.0 - 0.25 / (0.25 + a + q)
    roots = cubic_roots(*c)
    hits = int(np.sum(np.any(roots == one_minus_gamma[:, None], axis=1))) + int(np.sum(g(one_minus_gamma) == 0))
    rec.check("1 - gamma never a root when b > 0", hits == 0, f"{hits} hits")
    elapsed = time.perf_counter() - t0
    rec.check("runtime < 30 s", elapsed < 30, f"{elapsed:.1f} s")
    rec.verify()


@acceptance(6)
def test_c6_gap_bound(criterion):
    rec = criterion(6)
    t0 = time.perf_counter()
    a, q, xb = _random_inputs(106)
    w0, _ = pred.optimal_weights(xb, a, q)
    violations = 0
    slack = np.inf
    for i in range(N_RANDOM):
        params = ModelParameters(a[i], [1.0])
        prof = shrinkage_profile(a[i], q[i], 1.0)
        bound = pred.weight_gap_bound(xb[i], params, prof)
        gap = abs(w0[i] - (1 - prof.gamma))
        violations += not gap < bound
        slack = min(slack, bound - gap)
    elapsed = time.perf_counter() - t0
    rec.check("|w0 - (1 - gamma)| < bound", violations == 0, f"{violations} violations, min slack {slack:.1e}")
    rec.check("runtime < 10 s", elapsed < 10, f"{elapsed:.1f} s")
    rec.verify()


@acceptance(7)
def test_c7_recovery(criterion):
    rec = criterion(7)
    t0 = time.perf_counter()
    rng = np.random.default_rng(107)
    worst = 0.0
    for _ in range(1000):
        a = rng.uniform(0.01, 2)
        beta = rng.normal(size=3)
        x = np.array([1.0, *rng.normal(4, 1, 2)])
        z = float(rng.normal(x @ beta, 1))
        obs = AreaObservation(area_id=0, z=z, t=int(rng.integers(1, 100)), x_hat=x, sigma=np.zeros((3, 3)))
        params = ModelParameters(a, beta)
        xb = float(x @ beta)
        prop = pred.proposed_predict(z, xb, params, derive_profile(params, obs, xb)).value
        bp = pred.bayes_predict(z, xb, params)
        worst = max(worst, abs(prop - bp) / max(1.0, abs(bp)))
    rec.check("proposed = Bayes predictor with no measurement error", worst <= 1e-12, f"max rel diff {worst:.1e}")

    (cfg,) = load_config("default")
    res = run_study(ScenarioConfig(**{**cfg.__dict__, "sigma_gen": 0.0}))
    diffs = []
    for t in (10, 100):
        p, b = res.summary("proposed", t), res.summary("bp", t)
        diffs.append(abs(p.empirical_mspe - b.empirical_mspe) / b.empirical_mspe)
        diffs.append(abs(p.empirical_bias - b.empirical_bias) / b.empirical_mspe)
    detail = {(r["area"], r["predictor"]): r for r in res.detail}
    for area in {r["area"] for r in res.detail}:
        p, b = detail[(area, "proposed")], detail[(area, "bp")]
        diffs.append(abs(p["empirical_mspe"] - b["empirical_mspe"]) / b["empirical_mspe"])
    rec.check("study proposed column = Bayes column", max(diffs) <= 1e-12, f"max rel diff {max(diffs):.1e}")
    elapsed = time.perf_counter() - t0
    rec.check("runtime < 10 s", elapsed < 10, f"{elapsed:.1f} s")
    rec.verify()


@acceptance(8)
def test_c8_table_orderings(criterion, default_studies):
    rec = criterion(8)
    results, elapsed = default_studies
    for m, res in results.items():
        for t in (10, 100):
            e = {name: res.summary(name, t).empirical_mspe for name in
                 ("direct", "proposed_pr", "proposed_yl", "b_substitute", "optimal_pr", "optimal_yl")}
            tag = f"m={m} t={t}"
            rec.check(f"P-PR < d ({tag})", e["proposed_pr"] < e["direct"], f"{e['proposed_pr']:.2f} vs {e['direct']:.2f}")
            rec.check(f"P-YL < d ({tag})", e["proposed_yl"] < e["direct"], f"{e['proposed_yl']:.2f} vs {e['direct']:.2f}")
            if t == 10:
                rec.check(f"B > d ({tag})", e["b_substitute"] > e["direct"], f"{e['b_substitute']:.2f} vs {e['direct']:.2f}")
            rec.check(f"lambda0 PR < YL ({tag})", e["optimal_pr"] < e["optimal_yl"], f"{e['optimal_pr']:.2f} vs {e['optimal_yl']:.2f}")
    rec.check("runtime < 5 min", elapsed < 300, f"{elapsed:.1f} s")
    rec.verify()


@pytest.fixture(scope="module")
def m100_draws():
    cfg = ScenarioConfig(m=100, trials=1000, seed=1)
    design = generate_scenario(cfg)
    return cfg, design, [run_trial(design, cfg, j) for j in range(1000)]


@acceptance(9)
def test_c9_noiseless_recovery(criterion):
    rec = criterion(9)
    cfg = ScenarioConfig(m=100, trials=1, seed=1)
    d = generate_scenario(cfg)
    beta = np.asarray(cfg.beta_true)
    z = d.x @ beta
    sigma = np.zeros((100, 6, 6))
    for name, (a_hat, b_hat, _, _) in (("pr", pr_arrays(z, d.x)), ("yl", yl_arrays(z, d.x, d.t, sigma))):
        err = float(np.max(np.abs(b_hat - beta)))
        rec.check(f"{name}: beta_hat = beta, a_hat = 0", err < 1e-10 and a_hat == 0.0, f"beta err {err:.1e}, a_hat {a_hat}")
    rec.verify()


@acceptance(9)
def test_c9_yl_variance_mean(criterion, m100_draws):
    rec = criterion(9)
    t0 = time.perf_counter()
    cfg, design, draws = m100_draws
    sigma = np.broadcast_to(design.sigma, (100, 6, 6))
    yl = np.array([yl_arrays(tr.z, tr.x_hat, design.t, sigma)[::2] for tr in draws])
    a_pr = np.array([pr_arrays(tr.z, tr.x_hat)[0] for tr in draws])
    a_yl = yl[:, 0]
    mean, se = a_yl.mean(), a_yl.std(ddof=1) / math.sqrt(len(a_yl))
    elapsed = time.perf_counter() - t0
    rec.check(
        "mean YL a_hat within 3 SE of 0.2",
        abs(mean - 0.2) <= 3 * se,
        f"mean {mean:.4f} (SE {se:.4f}), mean untruncated {yl[:, 1].mean():.3f}; PR mean {a_pr.mean():.4f}",
    )
    rec.check("runtime < 2 min", elapsed < 120, f"{elapsed:.1f} s")
    rec.verify()


@acceptance(9)
def test_c9_truncation(criterion, m100_draws):
    rec = criterion(9)
    cfg, design, draws = m100_draws
    sigma = np.broadcast_to(design.sigma, (100, 6, 6))
    bad = negatives = 0
    for tr in draws:
        for a_hat, _, raw, _ in (pr_arrays(tr.z, tr.x_hat), yl_arrays(tr.z, tr.x_hat, design.t, sigma)):
            negatives += raw < 0
            bad += not (a_hat >= 0 and a_hat == max(raw, 0.0))
    rec.check("negative a_hat truncated to 0", bad == 0, f"{negatives} negative raw estimates, {bad} untruncated")
    rec.verify()


@acceptance(10)
def test_c10_negative_values(criterion, default_studies):
    rec = criterion(10)
    results, _ = default_studies
    for m, res in results.items():
        total = sum(res.negative_counts.values())
        rec.check(f"no negative predictions (m={m})", total == 0, f"{total} negative values")
        beta = np.asarray(res.config.beta_true)
        params = ModelParameters(res.config.a_true, beta)
        d = res.design
        worst = 0.0
        for i in range(m):
            obs = AreaObservation(area_id=i, z=0.0, t=int(d.t[i]), x_hat=d.x[i], sigma=d.sigma)
            mu = float(d.x[i] @ beta)
            prof = derive_profile(params, obs, mu)
            w0, _ = pred.optimal_weight(mu, params, prof)
            for w in (1.0, 1 - prof.gamma, w0):
                worst = max(worst, pred.negative_probability(w, mu, params, prof))
        rec.check(f"negative probability < 1e-15 (m={m})", worst < 1e-15, f"max {worst:.1e}")
    rec.verify()


@acceptance(11)
def test_c11_determinism(criterion, default_studies, tmp_path):
    rec = criterion(11)
    results, c8_time = default_studies
    t0 = time.perf_counter()
    write_table2([results[20]], tmp_path / "fixture.csv")
    codes = [
        main(["simulate", "--config", "default", "--out", str(tmp_path / "one"), "--threads", "1"]),
        main(["simulate", "--config", "default", "--out", str(tmp_path / "eight"), "--threads", "8"]),
    ]
    elapsed = time.perf_counter() - t0
    base = (tmp_path / "fixture.csv").read_bytes()
    one = (tmp_path / "one" / "table2_summary.csv").read_bytes()
    eight = (tmp_path / "eight" / "table2_summary.csv").read_bytes()
    rec.check("runs exit 0", codes == [0, 0], str(codes))
    rec.check("two runs byte-identical", base == one)
    rec.check("1 vs 8 threads byte-identical", one == eight)
    rec.check("runtime < 2x criterion 8", elapsed < 2 * c8_time, f"{elapsed:.1f} s vs {c8_time:.1f} s")
    rec.verify()
