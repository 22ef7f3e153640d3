from __future__ import annotations

import math

import numpy as np
import pytest

from irvlab.blackscholes import bs_call
from irvlab.core import StoppingBand
from irvlab.engine import ConfigurationError, TimeGrid, mean_and_se
from irvlab.sandwich import (
    AdmissibilityError,
    InconsistencyFault,
    SandwichSpec,
    bounded_unit_martingale,
    brownian_paths,
    extract_irv,
    extract_irv_batch,
    sandwich_experiment,
    simulate_sandwich,
    single_option_sandwich,
    three_option_sandwich,
)
from irvlab.static_arb import SmileSnapshot, check


def test_bum_initial_value_and_frozen_z():
    z = np.zeros(11)
    n = bounded_unit_martingale(z, 1.0, 0.1)
    t = np.arange(11) * 0.1
    assert n[0] == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert np.allclose(n, np.exp(-1.0 + t), rtol=1e-15)
    assert n[-1] == pytest.approx(1.0)


def test_bum_stays_in_unit_interval():
    grid = TimeGrid.covering(1.0, 1e-2)
    z = brownian_paths(0, np.arange(500), 1, grid)
    n = bounded_unit_martingale(z, 1.0, grid.dt)
    assert np.all(n[:, :-1] > 0) and np.all(n[:, :-1] < 1)


def test_bum_martingale_ensemble():
    grid = TimeGrid.covering(1.0, 1e-2)
    z = brownian_paths(3, np.arange(20_000), 1, grid)
    nT = bounded_unit_martingale(z, 1.0, grid.dt)[:, -1]
    m, se = mean_and_se(nT)
    assert abs(m - math.exp(-1)) <= 3 * se


def test_bum_rejects_grid_beyond_horizon():
    with pytest.raises(ValueError):
        bounded_unit_martingale(np.zeros(12), 1.0, 0.1)


def test_spec_admissibility():
    with pytest.raises(AdmissibilityError):
        SandwichSpec("single", (1.0,), 1.0, 1.0)
    with pytest.raises(AdmissibilityError):
        SandwichSpec("three", (0.5, 0.7, 1.1), 1.0, 1.0)
    with pytest.raises(AdmissibilityError):
        # N1_0 = e^{-0.2} > 1 - N12_0 = 1 - e^{-0.2}
        SandwichSpec("three", (0.5, 0.7, 0.9), 0.2, 1.0)
    with pytest.raises(ConfigurationError):
        SandwichSpec("two", (0.5, 0.7), 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        SandwichSpec("single", (1.2,), 1.0, 1.0, n_horizons=(0.5,))


def test_single_constant_double_lower_branch():
    spec = SandwichSpec("single", (2.0,), 1.0, 1.0)
    s = np.array([[1.0, 1.3, 0.7, 1.9]])
    sp = single_option_sandwich(spec, s, np.full_like(s, 0.5))
    assert np.array_equal(sp.c[0, 0], s[0] / 2)
    assert sp.stop_index[0] == -1


def test_single_branches_and_stop():
    up = SandwichSpec("single", (0.8,), 1.0, 1.0)
    s = np.array([[1.0, 0.9, 0.7, 0.85]])
    n = np.array([[0.3, 0.35, 0.4, 0.45]])
    sp = single_option_sandwich(up, s, n)
    assert sp.stop_index[0] == 2
    expected = s[0, :3] - (1 - n[0, :3]) * 0.8
    assert np.allclose(sp.c[0, 0, :3], expected)
    assert np.all(sp.c[0, 0, 2:] == sp.c[0, 0, 2])


def test_three_option_constant_doubles():
    spec = SandwichSpec("three", (0.5, 0.8, 1.0), 1.0, 2.0)
    s = np.full((1, 3), 2.0)
    n = np.full((1, 3), 0.3)
    sp = three_option_sandwich(spec, s, n, n, n)
    assert sp.c[0, :, 0] == pytest.approx([1.65, 1.56, 1.542], abs=1e-15)
    snap = SmileSnapshot(2.0, spec.strikes, tuple(sp.c[0, :, 0]))
    assert check(snap).clean


def test_three_option_immediate_stop():
    spec = SandwichSpec("three", (0.5, 0.8, 1.0), 1.0, 2.0)
    s = np.full((1, 3), 2.0)
    sp = three_option_sandwich(spec, s, np.full((1, 3), 0.71), np.full((1, 3), 0.3), np.full((1, 3), 0.3))
    assert sp.stop_index[0] == 0
    assert sp.reason[0] == 3


def test_three_option_stop_dominance():
    spec = SandwichSpec("three", (0.5, 0.7, 0.9), 1.0, 1.0)
    grid = TimeGrid.covering(1.0, 1e-2)
    sp = simulate_sandwich(spec, grid, np.arange(300), seed=2)
    for p in range(300):
        # every point before the stop satisfies the construction's inequalities
        stop = sp.stop_index[p]
        end = sp.times.size if stop < 0 else stop
        assert np.all(sp.s[p, :end] > 0.9)
        assert np.all(sp.n["N1"][p, :end] < 1 - sp.n["N12"][p, :end])


def test_stopped_paths_are_frozen():
    spec = SandwichSpec("single", (1.05,), 1.0, 1.0)
    sp = simulate_sandwich(spec, TimeGrid.covering(1.0, 1e-2), np.arange(200), seed=1)
    stopped = np.nonzero(sp.stop_index >= 0)[0]
    assert stopped.size > 50
    for p in stopped:
        i = sp.stop_index[p]
        assert np.all(sp.c[p, 0, i:] == sp.c[p, 0, i])
        assert np.all(sp.s[p, i:] == sp.s[p, i])


def test_simulation_is_reproducible_per_path():
    spec = SandwichSpec("single", (1.2,), 1.0, 1.0)
    grid = TimeGrid.covering(1.0, 1e-2)
    a = simulate_sandwich(spec, grid, np.arange(10), seed=5)
    b = simulate_sandwich(spec, grid, np.arange(4, 8), seed=5)
    assert np.array_equal(a.c[4:8], b.c)


def test_lower_branch_fits_every_larger_strike():
    # ((S - L)+, S) contains ((S - K)+, S) for L >= K
    spec = SandwichSpec("single", (1.2,), 1.0, 1.0)
    sp = simulate_sandwich(spec, TimeGrid.covering(1.0, 1e-2), np.arange(500), seed=3)
    pre = sp.pre_stop_mask()
    C, S = sp.c[:, 0, :][pre], sp.s[pre]
    for L in (1.2, 2.4, 4.8):
        assert np.all(C > np.maximum(S - L, 0)) and np.all(C < S)


def test_smaller_strike_sandwich_passes_larger_strike_bounds():
    small = SandwichSpec("single", (0.6,), 1.0, 1.0)
    sp = simulate_sandwich(small, TimeGrid.covering(1.0, 1e-2), np.arange(500), seed=3)
    pre = sp.pre_stop_mask()
    C, S = sp.c[:, 0, :][pre], sp.s[pre]
    for K in (0.6, 1.2):
        assert np.all(C > np.maximum(S - K, 0)) and np.all(C < S)


def test_lower_branch_need_not_fit_smaller_strikes():
    # the reverse containment is false: N S drops below S - K/2 when N is small
    spec = SandwichSpec("single", (1.2,), 1.0, 1.0)
    sp = simulate_sandwich(spec, TimeGrid.covering(1.0, 1e-2), np.arange(500), seed=3)
    pre = sp.pre_stop_mask()
    C, S = sp.c[:, 0, :][pre], sp.s[pre]
    assert np.any(C <= np.maximum(S - 0.6, 0))


def test_extract_irv_black_scholes():
    sigma, T, K = 0.25, 1.0, 1.1
    t = np.linspace(0, 0.9, 10)
    s = np.exp(np.linspace(-0.2, 0.2, 10))
    c = s * bs_call(np.log(K / s), sigma * np.sqrt(T - t))
    ex = extract_irv(c, s, K, StoppingBand(1e4))
    assert ex.stop_index is None
    assert np.max(np.abs(ex.omega - sigma**2 * (T - t))) <= 1e-8


def test_extract_irv_fault_before_stop():
    s = np.array([1.0, 1.0, 1.0])
    c = np.array([0.1, 1.2, 0.1])  # C > S is caught by the band stop at index 1
    ex = extract_irv(c, s, 1.1, StoppingBand(1e4))
    assert ex.stop_index == 1
    # the same path is inconsistent when its price model declared no stop
    with pytest.raises(InconsistencyFault):
        extract_irv(c, s, 1.1, StoppingBand(1e4), declared_stop=-1)
    # a violation at or after the declared stop is not a fault
    assert extract_irv(c, s, 1.1, StoppingBand(1e4), declared_stop=1).stop_index == 1


def test_extract_batch_counts_faults_before_declared_stop():
    s = np.ones((2, 3))
    c = np.array([[0.1, 1.2, 0.1], [0.1, 0.2, float("nan")]])
    _, _, faults = extract_irv_batch(c, s, 1.1, StoppingBand(1e4), np.array([-1, -1]))
    assert faults == 2
    _, _, faults = extract_irv_batch(c, s, 1.1, StoppingBand(1e4), np.array([1, 2]))
    assert faults == 0


def test_extract_irv_frozen_after_stop():
    s = np.array([1.0, 1.0, 1.0, 1.0])
    c = np.array([0.1, 0.2, 1e-9, 1e-9])
    ex = extract_irv(c, s, 1.1, StoppingBand(1e4))
    assert ex.stop_index == 2
    assert ex.omega[2] == ex.omega[3]


def test_extract_batch_matches_single():
    spec = SandwichSpec("single", (1.2,), 1.0, 1.0)
    sp = simulate_sandwich(spec, TimeGrid.covering(1.0, 2e-2), np.arange(20), seed=1)
    band = StoppingBand(1e4)
    om, stop, faults = extract_irv_batch(sp.c[:, 0, :], sp.s, 1.2, band)
    assert faults == 0
    for p in range(20):
        ex = extract_irv(sp.c[p, 0], sp.s[p], 1.2, band)
        assert np.allclose(om[p], ex.omega, rtol=1e-12, atol=0)
        assert (stop[p] < 0) == (ex.stop_index is None)


def test_small_experiment_passes():
    spec = SandwichSpec("three", (0.5, 0.7, 0.9), 1.0, 1.0)
    rep = sandwich_experiment(spec, TimeGrid.covering(1.0, 1e-2), 2000, seed=4, chunk_size=700)
    assert rep.prestop_violations == 0
    assert rep.passed
    assert sum(rep.stop_counts.values()) == 2000
    d = rep.to_dict()
    assert d["variant"] == "three" and len(d["option_stats"]) == 3


def test_experiment_chunking_invariance():
    spec = SandwichSpec("single", (1.2,), 1.0, 1.0)
    g = TimeGrid.covering(1.0, 2e-2)
    a = sandwich_experiment(spec, g, 300, seed=2, chunk_size=300)
    b = sandwich_experiment(spec, g, 300, seed=2, chunk_size=77)
    assert a.option_stats[0] == b.option_stats[0]
    assert a.bum_stats == b.bum_stats
