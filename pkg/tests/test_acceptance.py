"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports its measured values.
"""

import itertools
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from tanglepc.analytic import ModelParams, g, p_u, p_urw, p_urw_star, quadrature_reference
from tanglepc.detection import (
    DetectorConfig,
    calibrate_from_windows,
    honest_windows,
    sliding_windows,
    window_distances,
)
from tanglepc.parasite import (
    AttackSpec,
    build,
    mimic_rate_ratio,
    pc_a_analytic,
    pc_a_root_probability,
    walk_template,
)
from tanglepc.simulator import (
    SimConfig,
    fit_linear_exit,
    measure_approver_distribution,
    measure_exit_profile,
    simulate,
    snapshot_times,
)
from tanglepc.tipselect import WalkConfig, exit_distribution

URW100 = SimConfig(100, "sem", "walk", horizon=400, warmup=100, seed=7)
A = 1.3
PARAMS = ModelParams(100, "sem", A)
WARMUP = 100.0


def _urts_run(lam, policy="sem", samples=110_000, seed=1):
    horizon = WARMUP + samples / lam + 2.0
    return simulate(SimConfig(lam, policy, "urts", horizon=horizon, warmup=WARMUP, seed=seed))


@pytest.fixture(scope="module")
def urts_runs():
    return {lam: _urts_run(lam, seed=100 + lam) for lam in (1, 5, 20, 100)}


@pytest.fixture(scope="module")
def calibrations(urw100):
    """Honest S=10 calibrations (fit and held-out windows) for both metrics."""
    ref = p_urw_star(PARAMS)
    fit = honest_windows(urw100.tangle, 10, 50_000, random.Random(21), warmup=WARMUP)
    held = honest_windows(urw100.tangle, 10, 50_000, random.Random(22), warmup=WARMUP)
    out = {}
    for metric in ("dp", "dq"):
        cal = calibrate_from_windows(fit, DetectorConfig(10, ref, metric))
        out[metric] = (cal, cal.flag_rate(window_distances(held, ref, metric)))
    return out


def _host():
    """Small honest Tangle to hang parasite chains on; the chains' own
    statistics do not depend on it."""
    return simulate(SimConfig(5, "sem", "urts", horizon=30, warmup=0, seed=3)).tangle


def _pc(kind, mu, duration, seed, **kw):
    host = _host()
    spec = AttackSpec(kind, mu, duration, root=min(host.tips()), start=host.clock, **kw)
    return build(host, spec, random.Random(seed))


@pytest.fixture(scope="module")
def parasite_chains(urw100):
    star = p_urw_star(PARAMS)
    template = walk_template(urw100.tangle, 4_000, random.Random(31), warmup=WARMUP)
    pcs = {
        "spc": _pc("spc", 10, 200, 1),
        "pc_a": _pc("pc1", 50, 400, 2, p_root=pc_a_root_probability(star)),
        "mimic_greedy": _pc("mimic", 10, 200, 3, target_distribution=star, mimic_strategy="greedy"),
        "mimic_quota": _pc("mimic", 50, 400, 4, target_distribution=star, template=template),
    }
    # a broader sweep for the structural bound
    for i, (kind, mu) in enumerate(itertools.product(("spc", "pc1", "mimic"), (0.5, 3, 20))):
        kw = {}
        if kind == "pc1":
            kw["p_root"] = (0.3, 0.7, 0.9)[i % 3]
        if kind == "mimic":
            kw = {"target_distribution": star, "mimic_strategy": ("greedy", "quota")[i % 2]}
        pcs[f"sweep_{kind}_{mu}"] = _pc(kind, mu, 60, 50 + i, **kw)
    return pcs


def test_acc01_urts_sem_matches_p_u(urts_runs, criterion):
    worst, sizes = 0.0, []
    for lam, res in urts_runs.items():
        hist = measure_approver_distribution(res.tangle, "all", WARMUP, res.config.horizon)
        sim, ana = hist.distribution(), p_u(ModelParams(lam, "sem", 0.0))
        sizes.append(hist.sample_size)
        worst = max(worst, max(abs(sim[n] - ana[n]) for n in range(1, 5)))
    ok = worst <= 0.02 and min(sizes) >= 100_000
    assert criterion("ACC 1 URTS/SEM vs P_U", ok,
                     f"max |sim - P_U| = {worst:.4f} (tol 0.02), min eligible = {min(sizes)}")


def test_acc02_mem_parity_anomaly(criterion):
    lam = 2
    ana = p_u(ModelParams(lam, "mem", 0.0))
    runs = []
    for seed in range(20):
        res = _urts_run(lam, "mem", samples=10_000, seed=1000 + seed)
        sim = measure_approver_distribution(res.tangle, "all", WARMUP, res.config.horizon).distribution()
        runs.append((sim[3], sim[4]))
    runs = np.array(runs)
    mean, se = runs.mean(axis=0), runs.std(axis=0, ddof=1) / np.sqrt(len(runs))
    z3, z4 = (mean[0] - ana[3]) / se[0], (mean[1] - ana[4]) / se[1]
    ok = z4 >= 3 and z3 <= -3
    assert criterion("ACC 2 MEM parity anomaly at lambda=2", ok,
                     f"P(4) {mean[1]:.4f} vs P_U(4) {ana[4]:.4f} (z={z4:+.1f}); "
                     f"P(3) {mean[0]:.4f} vs P_U(3) {ana[3]:.4f} (z={z3:+.1f}); need z4>=3 and z3<=-3")


def test_acc03_exit_profile_slope(urw100, criterion):
    t0 = time.perf_counter()
    profile = measure_exit_profile(URW100, 100, 100_000, tangle=urw100.tangle)
    a = fit_linear_exit(profile)
    elapsed = time.perf_counter() - t0
    ok = 1.1 <= a <= 1.5 and elapsed < 600
    assert criterion("ACC 3 exit-profile slope", ok,
                     f"a = {a:.3f} (range 1.1..1.5), 100 snapshots x 1e5 walks in {elapsed:.1f}s")


def test_acc04_closed_form_vs_quadrature(criterion):
    worst = 0.0
    for lam, a in itertools.product((10, 100), (0.1, 0.5, 1.0, 1.3, 2.0)):
        params = ModelParams(lam, "sem", a)
        urw, star = p_urw(params), p_urw_star(params)
        for n in range(1, 11):
            worst = max(worst, abs(urw[n] - quadrature_reference(params, n)),
                        abs(star[n] - quadrature_reference(params, n, weighted=True)))
    assert criterion("ACC 4 closed form vs quadrature", worst < 1e-9, f"max deviation {worst:.2e} (tol 1e-9)")


def test_acc05_small_a_continuity(criterion):
    pu = p_u(ModelParams(100, "sem", 0.0))
    worst = max(abs(p_urw(ModelParams(100, "sem", 1e-6))[n] / pu[n] - 1) for n in range(1, 7))
    # the closed form itself (just above the a = 0 shortcut) must also be continuous
    lu = PARAMS.lambda_u
    closed = max(abs(g(n, 2e-6, lu) - 1) for n in range(7))
    ok = worst < 1e-4 and closed < 1e-4
    assert criterion("ACC 5 a->0 continuity", ok,
                     f"max ratio error {worst:.2e}, closed-form g at a=2e-6 off by {closed:.2e} (tol 1e-4)")


def test_acc06_urw_distributions(urw100, criterion):
    tangle, horizon = urw100.tangle, URW100.horizon
    all_ = measure_approver_distribution(tangle, "all", WARMUP, horizon).distribution()
    walks = measure_approver_distribution(tangle, "along_walks", WARMUP, horizon, walks=2_000,
                                          rng=random.Random(5)).distribution()
    urw, star = p_urw(PARAMS), p_urw_star(PARAMS)
    d_all = max(abs(all_[n] - urw[n]) for n in range(1, 5))
    d_walk = max(abs(walks[n] - star[n]) for n in range(1, 5))
    ok = d_all <= 0.02 and d_walk <= 0.02
    assert criterion("ACC 6 URW all / along_walks", ok,
                     f"all vs P_URW {d_all:.4f}, along_walks vs P* {d_walk:.4f} (tol 0.02)")


def _enumerated_distances(S, support, ref, metric):
    """Every distance an S-sample over ``support`` can take, by exhaustive enumeration."""
    values = set()
    k = max(max(support) + 1, len(ref))
    r = [Fraction(x) for x in ref.padded(k)]
    for combo in itertools.combinations_with_replacement(support, S):
        p = [Fraction(combo.count(n), S) for n in range(k)]
        if metric == "dp":
            d = sum(abs(a - b) for a, b in zip(p, r)) / 2
        else:
            d = sum(abs(sum(p[n:]) - sum(r[n:])) for n in range(k)) / 2
        values.add(round(float(d), 10))
    return values


def test_acc07_distance_cdfs(urw100, criterion):
    ref = p_urw_star(PARAMS)
    sizes = (10, 25, 50, 100)
    cals = {}
    for S in sizes:
        windows = honest_windows(urw100.tangle, S, 30_000, random.Random(70 + S), warmup=WARMUP)
        for metric in ("dp", "dq"):
            cals[S, metric] = calibrate_from_windows(windows, DetectorConfig(S, ref, metric))
    monotone = all(np.all(np.diff(c.cdf(c.steps())) > 0) for c in cals.values())
    dominance = True
    for metric, top in (("dp", 1.0), ("dq", 2.0)):
        grid = np.linspace(0, top, 401)
        curves = [cals[S, metric].cdf(grid) for S in sizes]
        dominance &= all(np.all(hi >= lo) for lo, hi in zip(curves, curves[1:]))
    distinct = {m: len(cals[10, m].steps()) for m in ("dp", "dq")}
    # shape logic: at S=5 every observed value is one the enumeration allows
    small = honest_windows(urw100.tangle, 5, 5_000, random.Random(75), warmup=WARMUP)
    support = list(range(int(small.max()) + 1))
    shape = all(
        set(np.round(window_distances(small, ref, m), 10).tolist()) <= _enumerated_distances(5, support, ref, m)
        for m in ("dp", "dq"))
    ok = monotone and dominance and shape and max(distinct.values()) <= 50
    assert criterion("ACC 7 distance CDFs", ok,
                     f"monotone={monotone}, dominance={dominance}, S=5 enumeration shape={shape}, "
                     f"S=10 distinct values dp={distinct['dp']} dq={distinct['dq']} (need <=50)")


def test_acc08_pc_a_analytics(criterion):
    dp, ratio = pc_a_analytic(p_urw_star(PARAMS))
    ok = abs(dp - 0.26) <= 0.02 and abs(ratio - 0.85) <= 0.02
    assert criterion("ACC 8 PC_A analytics", ok,
                     f"d_P = {dp:.4f} (want 0.26 +- 0.02), r/mu = {ratio:.4f} (want 0.85 +- 0.02)")


def test_acc09_mimic_rate(parasite_chains, criterion):
    formula = mimic_rate_ratio(p_urw_star(PARAMS))
    rates = {}
    for name in ("mimic_greedy", "mimic_quota"):
        rep = parasite_chains[name]
        rates[name] = (rep.effective_rate_r / rep.mu, rep.num_malicious, rep.residual_dp)
    ok = abs(formula - 0.46) <= 0.02 and all(
        abs(r - formula) <= 0.05 and n >= 1000 for r, n, _ in rates.values())
    detail = ", ".join(f"{k} {r:.3f} over {n} txs (residual d_P {d:.3f})" for k, (r, n, d) in rates.items())
    assert criterion("ACC 9 mimic rate", ok, f"formula r/mu = {formula:.4f} (want 0.46 +- 0.02); {detail}")


def test_acc10_future_cone_bound(parasite_chains, criterion):
    means = {k: rep.mean_n_pc for k, rep in parasite_chains.items()}
    worst = max(means, key=means.get)
    ok = all(m <= 2 for m in means.values())
    assert criterion("ACC 10 future-cone bound", ok,
                     f"{len(means)} builds, largest mean in-PC count {means[worst]:.3f} ({worst})")


def test_acc11_detection_power(parasite_chains, calibrations, criterion):
    ref = p_urw_star(PARAMS)

    def rate(name, metric):
        windows = sliding_windows(parasite_chains[name].main_counts(), 10)
        cal = calibrations[metric][0]
        return cal.flag_rate(window_distances(windows, ref, metric)), len(windows)

    spc = min(rate("spc", m)[0] for m in ("dp", "dq"))
    pca_dp, pca_dq = rate("pc_a", "dp")[0], rate("pc_a", "dq")[0]
    mimic, n_mimic = rate("mimic_quota", "dp")
    honest = calibrations["dp"][1]
    ok = spc >= 0.99 and pca_dq > pca_dp and abs(mimic - honest) <= 0.01
    assert criterion("ACC 11 detection power ordering", ok,
                     f"SPC {spc:.3f} (>=0.99); PC_A dq {pca_dq:.3f} > dp {pca_dp:.3f}; "
                     f"MIMIC {mimic:.4f} over {n_mimic} windows vs honest fpr {honest:.4f} (+-0.01)")


def test_acc12_tip_counts(urts_runs, urw100, criterion):
    urts, urw = urts_runs[100].mean_tips, urw100.mean_tips
    ok = abs(urts / 201 - 1) <= 0.05 and abs(urw / 210 - 1) <= 0.10
    assert criterion("ACC 12 tip-count laws", ok,
                     f"URTS {urts:.1f} (201 +- 5%), URW {urw:.1f} (210 +- 10%)")


def test_brw_matches_urw_at_small_alpha(urw100, criterion):
    tangle = urw100.tangle
    worst = 0.0
    for t in snapshot_times(URW100, 20):
        w = tangle.cumulative_weights(t)
        u = exit_distribution(tangle, WalkConfig(), t, w)
        b = exit_distribution(tangle, WalkConfig(alpha=0.001), t, w)
        worst = max(worst, 0.5 * sum(abs(u.get(x, 0) - b.get(x, 0)) for x in set(u) | set(b)))
    assert criterion("NOTE BRW vs URW at alpha*lambda=0.1", worst < 0.02,
                     f"max total variation over 20 snapshots {worst:.4f} (tol 0.02)")
