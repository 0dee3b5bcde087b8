"""Acceptance suite: one test per criterion, each recording a PASS/FAIL summary line.

Monte Carlo designs use fixed seed ranges, so every figure printed here is
reproducible bit for bit on the pinned numpy release.
"""

import time

import numpy as np
import pytest
from scipy import stats

from ivselect.cliques import VoteGraph, max_cliques
from ivselect.control_function import causal_effect, cf_fit, hausman_pretest
from ivselect.data import AnalysisOptions, Dataset
from ivselect.endogeneity import endo_test
from ivselect.probit_cf import cate_ci, probit_cf_fit
from ivselect.regression import ols_fit, probit_fit, probit_score, reduced_form_fit
from ivselect.searching import Grid, default_grid, sampling_ci, searching_ci
from ivselect.simulate import LinearSimConfig, ProbitSimConfig, gen_linear_iv, gen_probit_iv, true_cate
from ivselect.tsht import select_valid_mp, tsht
from ivselect.probit_cf import cate
from ivselect.control_function import build_bases
from ivselect import cli

import oracles

pytestmark = pytest.mark.slow


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------- 1


def test_c01_voting_patterns(record_criterion):
    names = [f"z{k}" for k in range(1, 9)]

    def run():
        right = oracles.adjacency(8, oracles.BRIDGED_VOTES)
        left = oracles.adjacency(8, oracles.SPLIT_VOTES)
        return (
            select_valid_mp(right),
            max_cliques(VoteGraph.from_matrix(right, names)),
            select_valid_mp(left),
            max_cliques(VoteGraph.from_matrix(left, names)),
        )

    run()  # warm up imports and caches before timing
    (mp_r, mc_r, mp_l, mc_l), secs = _timed(run)
    ok = (
        mp_r == (1, 2, 3, 4)
        and mc_r == [(0, 1, 2, 3), (1, 2, 3, 4)]
        and mp_l == (0, 1, 2, 3)
        and mc_l == [(0, 1, 2, 3)]
        and secs < 1e-3
    )
    record_criterion(1, ok, f"right MP={mp_r} MC={mc_r}; left MP={mp_l} MC={mc_l}; {secs * 1e3:.3f} ms")
    assert ok


# ---------------------------------------------------------------- 2


def test_c02_clique_oracle(record_criterion):
    rng = np.random.default_rng(2)
    mismatches = 0
    t0 = time.perf_counter()
    for _ in range(200):
        m = int(rng.integers(1, 19))
        p = rng.uniform(0.2, 0.9)
        upper = np.triu(rng.random((m, m)) < p, 1)
        adj = upper | upper.T | np.eye(m, dtype=bool)
        if max_cliques(VoteGraph.from_matrix(adj)) != oracles.brute_force_max_cliques(adj):
            mismatches += 1
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and secs < 10
    record_criterion(2, ok, f"{mismatches} mismatches on 200 graphs (|V|<=18), {secs:.2f} s")
    assert ok


# ---------------------------------------------------------------- 3


def _cf_instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(80, 400))
    p_z, p_x = int(rng.integers(1, 4)), int(rng.integers(0, 3))
    z = rng.normal(size=(n, p_z))
    x = rng.normal(size=(n, p_x))
    v = rng.normal(size=n)
    d = 1 + z @ rng.uniform(0.5, 1.5, p_z) + x @ rng.normal(size=p_x) + v
    y = 0.3 * d - 0.1 * d**2 + x @ rng.normal(size=p_x) + 0.5 * v + rng.normal(size=n)
    return Dataset.from_arrays(y, d, z, x)


def _direct_cf(ds):
    """Plain two regressions, independent of the package's own bookkeeping."""
    b = build_bases(ds)
    ones = np.ones(ds.n)
    first = np.column_stack([ones, b.H, b.X])
    v = ds.d - first @ oracles.normal_equations(first, ds.d)
    second = np.column_stack([ones, b.G, b.X, v])
    return oracles.normal_equations(second, ds.y)


def test_c03_cf_tsls_identity(record_criterion):
    t0 = time.perf_counter()
    worst_tsls = worst_direct = 0.0
    for seed in range(100):
        ds = _cf_instance(seed)
        fit = cf_fit(ds)
        direct = _direct_cf(ds)
        worst_tsls = max(worst_tsls, fit.augmented_tsls_check)
        rel = np.abs(fit.coef - direct) / np.maximum(np.abs(direct), 1.0)
        worst_direct = max(worst_direct, float(rel.max()))
    secs = time.perf_counter() - t0
    ok = worst_tsls <= 1e-8 and worst_direct <= 1e-8 and secs < 5
    record_criterion(
        3, ok, f"max rel gap CF vs augmented TSLS {worst_tsls:.2e}, vs direct OLS {worst_direct:.2e}; {secs:.2f} s"
    )
    assert ok


# ---------------------------------------------------------------- 4


def test_c04_mroz_cf_golden(record_criterion):
    def run():
        ds = oracles.mroz_linear()
        fit = cf_fit(ds)
        d2 = float(np.median(ds.d))
        return ds, fit, causal_effect(fit, d2 + 1, d2), hausman_pretest(ds)

    (ds, fit, ce, pre), secs = _timed(run)
    checks = {
        "n": ds.n == 428,
        "D": abs(fit.coef[1] - (-0.1434395)) <= 1e-4,
        "D^2": abs(fit.coef[2] - 0.0086426) <= 1e-4,
        "CE": abs(ce.beta_hat - 0.07263) <= 1e-4,
        "SE": abs(ce.se - 0.02171) <= 1e-4,
        "pretest": pre.chosen == "CF",
        "time": secs < 1,
    }
    ok = all(checks.values())
    record_criterion(
        4,
        ok,
        f"D={fit.coef[1]:.7f} D^2={fit.coef[2]:.7f} CE={ce.beta_hat:.5f} (SE {ce.se:.5f}) "
        f"pretest={pre.chosen} p={pre.p_value:.3f}; {secs:.2f} s; failed: {[k for k, v in checks.items() if not v]}",
    )
    assert ok


# ---------------------------------------------------------------- 5


def test_c05_mroz_binary_golden(record_criterion):
    def run():
        ds = oracles.mroz_binary()
        d2 = float(np.median(ds.d))
        w0 = oracles.mroz_binary_w0(ds, d2)
        return cate_ci(ds, d2 + 1, d2, w0, B=500, seed=0)

    res, secs = _timed(run)
    checks = {
        "beta": abs(res.beta_hat - 0.2119) <= 1e-3,
        "cate": abs(res.estimate - 0.0844) <= 1e-3,
        "beta_se": abs(res.beta_se / 0.092 - 1) <= 0.30,
        "cate_se": abs(res.se / 0.033 - 1) <= 0.30,
        "no invalid": res.fit.invalid_detected == (),
        "time": secs < 30,
    }
    ok = all(checks.values())
    record_criterion(
        5,
        ok,
        f"beta={res.beta_hat:.4f} (boot SE {res.beta_se:.4f}) CATE={res.estimate:.4f} (boot SE {res.se:.4f}) "
        f"B=500; {secs:.1f} s; failed: {[k for k, v in checks.items() if not v]}",
    )
    assert ok


# ---------------------------------------------------------------- 6 and 7


def _majority_design(seed):
    return LinearSimConfig.majority(n=2000, p_z=10, n_invalid=3, invalid_effect=1.0, err_corr=0.8, seed=seed)


def test_c06_tsht_monte_carlo(record_criterion):
    t0 = time.perf_counter()
    recovered = covered = 0
    reps = 500
    for r in range(reps):
        ds, truth = gen_linear_iv(_majority_design(10_000 + r))
        rep = tsht(ds)
        recovered += rep.selection.V_hats == (tuple(truth.valid),)
        lo, hi = rep.estimates[0].ci
        covered += lo <= truth.beta <= hi
    secs = time.perf_counter() - t0
    rec, cov = recovered / reps, covered / reps
    ok = rec >= 0.85 and 0.92 <= cov <= 0.98 and secs < 120
    record_criterion(6, ok, f"exact recovery {rec:.3f}, coverage {cov:.3f} over {reps} reps; {secs:.1f} s")
    assert ok


def test_c07_searching_sampling(record_criterion):
    t0 = time.perf_counter()
    reps = 300
    cov_s = cov_m = 0
    len_s, len_m = [], []
    for r in range(reps):
        ds, truth = gen_linear_iv(_majority_design(20_000 + r))
        rf = reduced_form_fit(ds)
        S = tsht(ds, rf=rf).selection.S_hat
        grid = default_grid(rf, S, n_points=2001)
        s = searching_ci(rf, S, 0.05, grid)
        m = sampling_ci(rf, S, 0.05, M=500, seed=r, grid=grid)
        cov_s += s.contains(truth.beta)
        cov_m += m.contains(truth.beta)
        len_s.append(s.length)
        len_m.append(m.length)
    secs = time.perf_counter() - t0
    ms, mm = float(np.median(len_s)), float(np.median(len_m))
    ok = cov_s / reps >= 0.93 and cov_m / reps >= 0.93 and mm <= ms and secs < 600
    record_criterion(
        7,
        ok,
        f"coverage searching {cov_s / reps:.3f} sampling {cov_m / reps:.3f}; median length searching {ms:.4f} "
        f"sampling {mm:.4f} over {reps} reps (M=500, 2001 points); {secs:.1f} s",
    )
    assert ok


# ---------------------------------------------------------------- 8


def _endo_design(err_corr, seed):
    # n=500, ten covariates, first three of ten instruments invalid
    k = np.arange(1, 11)
    return LinearSimConfig.majority(
        n=500, p_z=10, n_invalid=3, invalid_effect=1.0, p_x=10,
        phi=k / 10 + 0.5, psi=k / 10 + 1, err_corr=err_corr, seed=seed,
    )


def test_c08_endogeneity(record_criterion):
    t0 = time.perf_counter()
    reps = 200
    size = power = detected = 0
    for r in range(reps):
        ds0, _ = gen_linear_iv(_endo_design(0.0, 30_000 + r))
        size += endo_test(ds0).rejected
        ds8, _ = gen_linear_iv(_endo_design(0.8, 40_000 + r))
        res = endo_test(ds8)
        power += res.rejected
        detected += res.invalid == ("Z1", "Z2", "Z3")
    secs = time.perf_counter() - t0
    sz, pw, dt = size / reps, power / reps, detected / reps
    checks = {"size": 0.02 <= sz <= 0.09, "power": pw >= 0.9, "detection": dt >= 0.9, "time": secs < 120}
    ok = all(checks.values())
    record_criterion(
        8,
        ok,
        f"size {sz:.3f}, power {pw:.3f}, exact invalid-set detection {dt:.3f} over {reps} reps (n=500); "
        f"{secs:.1f} s; failed: {[k for k, v in checks.items() if not v]}",
    )
    assert ok


# ---------------------------------------------------------------- 9


def test_c09_probit_cate_coverage(record_criterion):
    t0 = time.perf_counter()
    reps = 200
    covered = 0
    for r in range(reps):
        cfg = ProbitSimConfig(kappa_z=[0.6, 0, 0, 0, 0], seed=50_000 + r)
        ds, _ = gen_probit_iv(cfg)
        w0 = np.zeros(cfg.p_z + cfg.p_x)
        truth = true_cate(cfg, 1.5, 0.5, w0)
        res = cate_ci(ds, 1.5, 0.5, w0, B=300, seed=r)
        covered += res.ci[0] <= truth <= res.ci[1]
    secs = time.perf_counter() - t0
    cov = covered / reps
    ok = cov >= 0.90 and secs < 900
    record_criterion(9, ok, f"bootstrap CI coverage {cov:.3f} over {reps} reps (B=300, 1 of 5 IVs invalid); {secs:.0f} s")
    assert ok


# ---------------------------------------------------------------- 10


def _fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_c10_numerical_probes(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    results = {}

    # probit gradient against central differences of the log-likelihood
    from ivselect.regression import probit_loglik

    worst = 0.0
    for _ in range(20):
        n, p = 200, 4
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        y = (X @ rng.normal(size=p) + rng.normal(size=n) > 0).astype(float)
        b = rng.normal(scale=0.5, size=p)
        fd = _fd_gradient(lambda c: probit_loglik(X, y, c), b)
        an = probit_score(X, y, b)
        worst = max(worst, float(np.max(np.abs(fd - an) / np.maximum(np.abs(an), 1.0))))
    results["probit gradient"] = worst <= 1e-4

    # sandwich equals classical (times n/(n-p)) when every squared residual is the same
    n = 300
    base = np.column_stack([np.ones(n // 2), rng.normal(size=(n // 2, 2))])
    X = np.vstack([base, base])
    r = np.concatenate([np.full(n // 2, 0.7), np.full(n // 2, -0.7)])
    y = X @ np.array([1.0, -2.0, 0.5]) + r
    fit = ols_fit(X, y)
    gap = np.max(np.abs(fit.robust_cov * n / (n - 3) - fit.classical_cov))
    results["sandwich vs classical"] = gap <= 1e-10 * np.abs(fit.classical_cov).max()

    # TSHT selection and estimate unchanged when instrument columns are rescaled
    ds, _ = gen_linear_iv(_majority_design(777))
    scale = rng.uniform(0.1, 10, ds.p_z)
    ds2 = Dataset.from_arrays(ds.y, ds.d, ds.z * scale)
    a, b = tsht(ds), tsht(ds2)
    results["TSHT scale invariance"] = (
        a.selection.S_hat == b.selection.S_hat
        and a.selection.V_hats == b.selection.V_hats
        and np.array_equal(a.selection.Pi_hat, b.selection.Pi_hat)
        and abs(a.estimates[0].beta_hat - b.estimates[0].beta_hat) <= 1e-8
    )

    # causal effect and CATE antisymmetry
    mroz = oracles.mroz_linear()
    cf = cf_fit(mroz)
    e1, e2 = causal_effect(cf, 14, 11), causal_effect(cf, 11, 14)
    results["causal_effect antisymmetry"] = abs(e1.beta_hat + e2.beta_hat) <= 1e-12 and abs(e1.se - e2.se) <= 1e-12
    bds = oracles.mroz_binary()
    pf = probit_cf_fit(bds)
    w0 = oracles.mroz_binary_w0(bds, 12.0)
    results["cate antisymmetry"] = cate(pf, 13, 12, w0) == -cate(pf, 12, 13, w0)

    secs = time.perf_counter() - t0
    ok = all(results.values()) and secs < 60
    record_criterion(10, ok, f"{sum(results.values())}/{len(results)} probes pass; {secs:.1f} s; failed: "
                     f"{[k for k, v in results.items() if not v]}")
    assert ok


# ---------------------------------------------------------------- 11


def test_c11_determinism(record_criterion, tmp_path, capsys):
    t0 = time.perf_counter()
    sim = tmp_path / "sim.csv"
    assert cli.run(["simulate", "--out", str(sim), "--seed", "11", "--n", "600"]) == 0
    common = ["--data", str(sim), "--outcome", "Y", "--treatment", "D", "--iv", "Z1..Z10", "--seed", "7"]
    bin_csv = tmp_path / "bin.csv"
    assert cli.run(["simulate", "--design", "probit", "--out", str(bin_csv), "--seed", "11", "--n", "400",
                    "--p-z", "5", "--p-x", "1", "--n-invalid", "1", "--gamma", "0.8", "--beta", "0.5",
                    "--err-corr", "0.5"]) == 0
    commands = {
        "simulate": ["simulate", "--out", str(tmp_path / "again.csv"), "--truth", str(tmp_path / "t.json"),
                     "--seed", "11", "--n", "600"],
        "sample": ["sample", *common, "--M", "200"],
        "endotest --bootstrap": ["endotest", *common, "--bootstrap", "100"],
        "probitcf --bootstrap": ["probitcf", "--data", str(bin_csv), "--outcome", "Y", "--treatment", "D",
                                 "--iv", "Z1..Z5", "--covariates", "X1", "--d1", "1.5", "--d2", "0.5",
                                 "--bootstrap", "100", "--seed", "7"],
    }
    same = {}
    for name, argv in commands.items():
        blobs = []
        for k in range(2):
            out = tmp_path / f"{name.split()[0]}_{k}.json"
            assert cli.run([*argv, "--json", str(out)]) == 0
            blobs.append(out.read_bytes())
        if name == "simulate":
            blobs.append((tmp_path / "again.csv").read_bytes() == sim.read_bytes())
        same[name] = blobs[0] == blobs[1] and all(b is not False for b in blobs[2:])
    capsys.readouterr()
    secs = time.perf_counter() - t0
    ok = all(same.values()) and secs < 60
    record_criterion(11, ok, f"byte-identical reruns: {same}; {secs:.1f} s")
    assert ok
