"""Acceptance criteria, one test per criterion.

Each test records a ``criterion N: PASS|FAIL ...`` line in RESULTS; the
lines are printed in the pytest terminal summary (see conftest.py) and when
this file is run as a script.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from irvlab.blackscholes import bs_call, bs_put, implied_root_variance
from irvlab.carr_sun import CarrSunParams, cs_ito_audit, cs_smile, discriminant, quadratic_residual
from irvlab.core import (
    BlackScholesModel,
    ExplicitDriftModel,
    StoppingBand,
    SwSubfamilyModel,
    SwSubfamilyParams,
    carr_sun_to_master,
    cs_no_drift_a,
    no_drift_a,
    w1_minus_sign_k,
)
from irvlab.engine import SimConfig, TimeGrid, martingale_test, mean_and_se, qv_check, simulate
from irvlab.sandwich import SandwichSpec, sandwich_experiment
from irvlab.ssvi import (
    SsviParams,
    certify_monotone,
    frak_B,
    frak_B_inverse,
    master_coefficients,
    smile_omega,
    ssvi_simulate,
    ssvi_snapshot,
)
from irvlab.static_arb import SmileSnapshot, brute_force_oracle, check

RESULTS: dict[int, str] = {}
SEED = 20261015


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def sw_model(K=1.1, T=1.0):
    return SwSubfamilyModel(SwSubfamilyParams(g1=lambda t, s, x: np.ones_like(s), w1=w1_minus_sign_k(K), T=T, bound_g1=1.0, bound_w1=1.0))


# --- 1 ---------------------------------------------------------------------


def test_criterion_1_bs_round_trip():
    t0 = time.perf_counter()
    k = np.arange(-12, 13) * 0.25
    v = np.logspace(-3, 1, 41)
    K, V = np.meshgrid(k, v, indexing="ij")
    c = bs_call(K, V)
    back = implied_root_variance(K, c)
    err = np.abs(back - V)
    bad = ~(err <= 1e-8)
    parity = np.abs(bs_call(K, V) - bs_put(K, V) + np.expm1(K))
    elapsed = time.perf_counter() - t0
    ok = not bad.any() and parity.max() <= 1e-14 and elapsed < 1.0
    record(
        1,
        ok,
        f"round-trip failures {int(bad.sum())}/{bad.size} (max err {np.nanmax(err):.3g}), "
        f"max parity residual {parity.max():.3g}, {elapsed:.2f}s",
    )


# --- 2 ---------------------------------------------------------------------


def test_criterion_2_no_drift_reductions():
    t0 = time.perf_counter()
    g = np.random.default_rng(SEED)
    om = g.uniform(1e-3, 10.0, 10_000)
    kk = g.uniform(-3.0, 3.0, 10_000)
    flat = no_drift_a(0.0, 0.0, om, kk)
    exact = bool(np.all(flat == -1.0))
    b_cs = g.uniform(-2.0, 2.0, 10_000)
    rho = g.uniform(-1.0, 1.0, 10_000)
    worst = 0.0
    for i in range(10_000):
        L = carr_sun_to_master(b_cs[i], rho[i], om[i])
        a_master = no_drift_a(L.b, L.c, om[i], kk[i])
        a_cs = cs_no_drift_a(b_cs[i], rho[i], om[i], kk[i])
        worst = max(worst, abs(a_cs - a_master) / max(abs(a_master), 1e-300))
    elapsed = time.perf_counter() - t0
    ok = exact and worst <= 1e-12 and elapsed < 1.0
    record(2, ok, f"flat drift exactly -1: {exact}, max mapping rel diff {worst:.3g}, {elapsed:.2f}s")


# --- 3 ---------------------------------------------------------------------


def test_criterion_3_ssvi_no_drift():
    t0 = time.perf_counter()
    g = np.random.default_rng(SEED + 3)
    theta = g.uniform(0.01, 10.0, 10_000)
    psi = g.uniform(0.0, 4.0, 10_000)
    k = g.uniform(-3.0, 3.0, 10_000)
    a, b, c = master_coefficients(theta, psi, k)
    w = smile_omega(theta, psi, k)
    res = np.abs(a - no_drift_a(b, c, w, k)) / np.maximum(1.0, np.abs(a))
    elapsed = time.perf_counter() - t0
    ok = res.max() <= 1e-12 and elapsed < 1.0
    record(3, ok, f"max scaled residual {res.max():.3g}, {elapsed:.2f}s")


# --- 4 ---------------------------------------------------------------------


def test_criterion_4_carr_sun_inconsistency():
    t0 = time.perf_counter()
    g = np.random.default_rng(SEED + 4)
    ks = np.linspace(-2.0, 2.0, 401)
    min_mismatch, checked = math.inf, 0
    for rho in (-0.75, -0.5, -0.25, 0.25, 0.5, 0.75):
        p = CarrSunParams(a0=1.0, a1=1.0, rho=rho)
        for k in ks:
            if abs(k + 2 * rho) < 1e-6:
                continue
            min_mismatch = min(min_mismatch, cs_ito_audit(float(k), p).orthogonal_mismatch)
            checked += 1
    quartic_ok, max_quad = True, 0.0
    for _ in range(2000):
        rho = float(g.choice([-1.0, 1.0]))
        a0 = g.uniform(1.0 + 1e-6, 5.0)
        a1 = g.uniform(max(0.0, (2 * rho - 1) / 4), 5.0)
        p = CarrSunParams(a0=a0, a1=a1, rho=rho)
        k = g.uniform(-2.0, 2.0)
        r = cs_ito_audit(k, p)
        quartic_ok &= r.residual_quartic_term > 0 and r.residual_quartic_term == 1 / (4 * math.sqrt(discriminant(k, p)))
    for _ in range(2000):
        rho = g.uniform(-1.0, 1.0)
        a0 = g.uniform(rho * rho + 1e-6, 5.0)
        a1 = g.uniform(max(0.0, (2 * rho - 1) / 4), 5.0)
        p = CarrSunParams(a0=a0, a1=a1, rho=rho)
        k = g.uniform(-2.0, 2.0)
        max_quad = max(max_quad, abs(quadratic_residual(cs_smile(k, p), k, p)))
    elapsed = time.perf_counter() - t0
    ok = min_mismatch > 1e-6 and quartic_ok and max_quad <= 1e-10 and elapsed < 1.0
    record(
        4,
        ok,
        f"min mismatch {min_mismatch:.3g} over {checked} points, quartic term exact and positive: {quartic_ok}, "
        f"max quadratic residual {max_quad:.3g}, {elapsed:.2f}s",
    )


# --- 5 ---------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_martingale_monte_carlo():
    t0 = time.perf_counter()
    grid = TimeGrid.covering(1.0, 1e-3)
    ens = simulate(sw_model(), 1.1, 1.0, 0.1, grid, SimConfig(n_paths=100_000, master_seed=SEED, band=StoppingBand(1e3), store_paths=False))
    st = martingale_test(ens)
    neg = simulate(
        ExplicitDriftModel(sigma=0.2, a=0.0, b=0.0, c=0.0), 1.1, 1.0, 0.1, grid,
        SimConfig(n_paths=10_000, master_seed=SEED, band=StoppingBand(1e3), store_paths=False),
    )
    zn = martingale_test(neg).drift_z_score
    elapsed = time.perf_counter() - t0
    diff = abs(st.mean_terminal_call - st.initial_call)
    ok = diff <= 3 * st.std_error and abs(zn) > 3 and elapsed < 100.0
    record(
        5,
        ok,
        f"|mean - C0| = {diff:.3g} vs 3 SE = {3 * st.std_error:.3g} (z {st.drift_z_score:.2f}, "
        f"{st.n_invalid} invalid), negative control z {zn:.1f}, {elapsed:.1f}s",
    )


# --- 6 ---------------------------------------------------------------------


def _bs_global(dt, exact):
    sigma = lambda t: 0.1 + 0.1 * t  # noqa: E731
    m = BlackScholesModel(sigma, exact_variance=exact, maturity=1.0)
    omega0 = m.integrated_variance(0.0, 1.0)
    ens = simulate(m, 1.0, 1.0, omega0, TimeGrid.covering(1.0, dt), SimConfig(n_paths=10_000, master_seed=SEED, store_paths=False))
    dev = np.abs(ens.terminal_call - np.maximum(ens.terminal_s - 1.0, 0.0))
    bias, se = mean_and_se(dev)
    return ens, bias, se


@pytest.mark.slow
def test_criterion_6_global_consistency():
    t0 = time.perf_counter()
    ens, bias, se = _bs_global(1e-3, True)
    omega_T = float(np.abs(ens.terminal_omega).max())
    # dt-halving study on the Euler variance scheme, where the bias is visible
    study = {dt: _bs_global(dt, False)[1:] for dt in (4e-3, 2e-3, 1e-3)}
    b4, b2, b1 = (study[d][0] for d in (4e-3, 2e-3, 1e-3))
    C = max(b4 / math.sqrt(4e-3), b2 / math.sqrt(2e-3))
    decreasing = b4 > b2 > b1
    elapsed = time.perf_counter() - t0
    ok = (
        omega_T <= 1e-12
        and bias <= 3 * se + C * math.sqrt(1e-3)
        and decreasing
        and study[1e-3][0] <= 3 * study[1e-3][1] + C * math.sqrt(1e-3)
        and elapsed < 30.0
    )
    record(
        6,
        ok,
        f"max |omega_T| {omega_T:.3g}, exact-variance bias {bias:.3g}; Euler bias "
        f"{b4:.3g} > {b2:.3g} > {b1:.3g}: {decreasing}, C = {C:.3g}, {elapsed:.1f}s",
    )


# --- 7 ---------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_qv_identity():
    t0 = time.perf_counter()
    res = {}
    for dt in (4e-3, 2e-3, 1e-3):
        ens = simulate(sw_model(), 1.1, 1.0, 0.1, TimeGrid.covering(1.0, dt),
                       SimConfig(n_paths=10_000, master_seed=SEED, band=StoppingBand(1e3), store_paths=False))
        res[dt] = qv_check(ens)
    r4, r2, r1 = res[4e-3], res[2e-3], res[1e-3]
    # a halving counts as decreasing unless the finer error exceeds the coarser by 3 SE
    dec = all(f.rel_error <= c.rel_error + 3 * math.hypot(f.rel_std_error, c.rel_std_error) for f, c in ((r2, r4), (r1, r2)))
    strict = r4.rel_error > r2.rel_error > r1.rel_error
    elapsed = time.perf_counter() - t0
    ok = r1.rel_error <= 0.10 and dec and elapsed < 30.0
    record(
        7,
        ok,
        f"rel_error {r4.rel_error:.3g} / {r2.rel_error:.3g} / {r1.rel_error:.3g} at dt 4e-3 / 2e-3 / 1e-3 "
        f"(SE {r1.rel_std_error:.2g}), decreasing within noise: {dec}, strictly: {strict}, {elapsed:.1f}s",
    )


# --- 8 ---------------------------------------------------------------------


def test_criterion_8_frak_B():
    t0 = time.perf_counter()
    flat = all(frak_B(t) == 16.0 for t in (4.0, 5.0, 10.0))
    zero = abs(frak_B(0.0)) <= 1e-12
    cert = certify_monotone(100_000)
    xs = np.linspace(0.0, 15.9, 33)
    inv = max(abs(frak_B(frak_B_inverse(float(x))) - x) for x in xs)
    elapsed = time.perf_counter() - t0
    ok = flat and zero and cert.nondecreasing and inv <= 1e-9 and elapsed < 1.0
    record(
        8,
        ok,
        f"flat at 16: {flat}, B(0) ~ 0: {zero}, monotone on {cert.n_points} points: {cert.nondecreasing}, "
        f"max inverse error {inv:.3g}, {elapsed:.2f}s",
    )


# --- 9 ---------------------------------------------------------------------


def random_snapshot(g, perturb):
    n = int(g.integers(3, 6))
    K = np.sort(g.uniform(0.6, 1.5, n))
    while np.any(np.diff(K) < 1e-3):
        K = np.sort(g.uniform(0.6, 1.5, n))
    C = bs_call(np.log(K), g.uniform(0.1, 1.0))
    if perturb:
        C = np.abs(C * (1.0 + g.normal(0.0, g.uniform(0.005, 0.2), n)))
    return SmileSnapshot(1.0, tuple(K), tuple(C))


@pytest.mark.slow
def test_criterion_9_checker_matches_oracle():
    t0 = time.perf_counter()
    g = np.random.default_rng(SEED + 9)
    agree = disagree = inconclusive = flagged = 0
    for j in range(1000):
        snap = random_snapshot(g, perturb=bool(j % 2))
        clean = check(snap).clean
        flagged += not clean
        res = brute_force_oracle(snap)
        if res.status == "inconclusive":
            inconclusive += 1
        elif clean == (res.status == "absent"):
            agree += 1
        else:
            disagree += 1
    elapsed = time.perf_counter() - t0
    ok = disagree == 0 and inconclusive < 10 and elapsed < 60.0
    record(
        9,
        ok,
        f"{agree} agree, {disagree} disagree, {inconclusive} inconclusive, "
        f"{flagged} flagged by the checker, {elapsed:.1f}s",
    )


# --- 10 --------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_10_sandwich_suite():
    t0 = time.perf_counter()
    grid = TimeGrid.covering(1.0, 1e-3)
    runs = {
        "lower K=1.2": sandwich_experiment(SandwichSpec("single", (1.2,), 1.0, 1.0), grid, 10_000, seed=SEED,
                                           extract_band=StoppingBand(1e4)),
        "upper K=0.8": sandwich_experiment(SandwichSpec("single", (0.8,), 1.0, 1.0), grid, 10_000, seed=SEED),
        "three (0.5,0.7,0.9)": sandwich_experiment(SandwichSpec("three", (0.5, 0.7, 0.9), 1.0, 1.0), grid, 10_000, seed=SEED),
    }
    elapsed = time.perf_counter() - t0
    parts, ok = [], elapsed < 60.0
    for name, rep in runs.items():
        zs = [st.drift_z_score for st in rep.option_stats]
        ok &= rep.passed
        parts.append(f"{name}: violations {rep.prestop_violations}, z {', '.join(f'{z:.2f}' for z in zs)}, "
                     f"N z {rep.bum_stats.drift_z_score:.2f}")
    low = runs["lower K=1.2"]
    ok &= low.irv_faults == 0 and low.irv_min_omega > 0 and math.isfinite(low.irv_max_omega)
    parts.append(f"extraction faults {low.irv_faults}, omega in [{low.irv_min_omega:.3g}, {low.irv_max_omega:.3g}]")
    record(10, bool(ok), "; ".join(parts) + f"; {elapsed:.1f}s")


# --- 11 --------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_11_ssvi_bubble():
    t0 = time.perf_counter()
    p = SsviParams(psi=2.0, theta0=2.0 * frak_B_inverse(4.0), T=1.0)
    strikes = np.exp(np.linspace(-1.0, 1.0, 21))
    run = ssvi_simulate(p, 0.3, strikes, TimeGrid.covering(1.0, 1e-3), 1000, seed=SEED)
    viol = run.pre_tau_violations()
    theta = 0.5
    bad = ssvi_snapshot(1.0, theta, math.sqrt(1.1 * frak_B(theta)), np.exp(np.linspace(-3.0, 3.0, 201)))
    convex = "convexity" in check(bad).conditions()
    elapsed = time.perf_counter() - t0
    ok = int(viol.sum()) == 0 and convex and elapsed < 60.0
    counts = np.bincount(run.reason, minlength=3)
    record(
        11,
        ok,
        f"pre-tau violations {int(viol.sum())} on {viol.size} paths (tau by band {counts[1]}, by bound {counts[2]}, "
        f"horizon {counts[0]}), over-bound snapshot shows convexity violation: {convex}, {elapsed:.1f}s",
    )


if __name__ == "__main__":
    import sys

    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    tests.sort(key=lambda f: int(f.__name__.split("_")[2]))
    failed = 0
    for fn in tests:
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
