"""Explicit sandwiched call-price martingales and IRV extraction.

A bounded unit martingale N in (0, 1) is built from a Brownian motion Z
independent of the asset:

    N_t = exp(-[T + Z_t^2 - t + 2 int_0^t Z_s^2 ds]),   dN = -2 N Z dZ.

Single option, stopped when S first reaches K:

    C = (S - K)+ + N [S - (S - K)+]

Three options with K1 < K2 < K3 < S0 and N1 < 1 - N12, stopped at xi, the
first time S <= K3 or N1 >= 1 - N12:

    C1 = S - (1 - N1) K1
    C2 = C1 - N12 (K2 - K1)
    C3 = C2 - N23 N12 (K3 - K2)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .blackscholes import PriceDomainError, implied_root_variance
from .core import StoppingBand
from .engine import ConfigurationError, EnsembleStats, TimeGrid, mean_and_se, z_score
from .static_arb import violation_counts

STOP_REASONS = ("horizon", "S-hits-K", "S-hits-K3", "N1-meets-1-minus-N12")
CH_S, CH_N1, CH_N12, CH_N23 = 0, 1, 2, 3


class AdmissibilityError(ValueError):
    pass


class InconsistencyFault(ArithmeticError):
    """A price outside the no-arbitrage bounds before the declared stop."""


def bounded_unit_martingale(z_path, T: float, dt: float) -> np.ndarray:
    """N_t on the grid of ``z_path`` (last axis = time, z_path[..., 0] = 0)."""
    z = np.asarray(z_path, dtype=float)
    n = z.shape[-1]
    t = np.arange(n) * dt
    if t[-1] > T * (1 + 1e-12):
        raise ValueError(f"the grid reaches t={t[-1]} beyond T={T}")
    z2 = z * z
    integral = np.zeros_like(z)
    integral[..., 1:] = np.cumsum(0.5 * dt * (z2[..., 1:] + z2[..., :-1]), axis=-1)
    return np.exp(-(T + z2 - t + 2.0 * integral))


def brownian_paths(seed: int, paths, channel: int, grid: TimeGrid) -> np.ndarray:
    xi = rng.normal_block(seed, paths, channel, grid.steps)
    z = np.zeros((xi.shape[0], grid.steps + 1))
    z[:, 1:] = np.cumsum(xi, axis=1) * math.sqrt(grid.dt)
    return z


def gbm_paths(seed: int, paths, s0: float, sigma: float, grid: TimeGrid) -> np.ndarray:
    xi = rng.normal_block(seed, paths, CH_S, grid.steps)
    logs = np.zeros((xi.shape[0], grid.steps + 1))
    logs[:, 1:] = np.cumsum(sigma * math.sqrt(grid.dt) * xi - 0.5 * sigma * sigma * grid.dt, axis=1)
    return s0 * np.exp(logs)


def _freeze(x: np.ndarray, stop: np.ndarray) -> np.ndarray:
    """Hold each row constant from its stop index on (stop < 0: no stop)."""
    x = x.copy()
    n = x.shape[-1]
    cols = np.arange(n)
    stopped = stop >= 0
    if np.any(stopped):
        rows = np.nonzero(stopped)[0]
        frozen = x[rows, stop[rows]]
        mask = cols[None, :] > stop[rows, None]
        sub = x[rows]
        sub[mask] = np.broadcast_to(frozen[:, None], sub.shape)[mask]
        x[rows] = sub
    return x


def _first(mask: np.ndarray) -> np.ndarray:
    """First True index along the last axis, -1 when none."""
    any_ = mask.any(axis=-1)
    return np.where(any_, mask.argmax(axis=-1), -1)


@dataclass(frozen=True)
class SandwichSpec:
    variant: str  # "single" or "three"
    strikes: tuple
    T: float
    s0: float
    sigma: float = 0.2
    # horizons used to build each N (defaults to T); N_0 = exp(-horizon)
    n_horizons: tuple = ()

    def __post_init__(self):
        if self.variant not in ("single", "three"):
            raise ConfigurationError(f"variant must be 'single' or 'three', got {self.variant!r}")
        K = tuple(float(k) for k in self.strikes)
        object.__setattr__(self, "strikes", K)
        if not (self.T > 0 and self.s0 > 0 and self.sigma > 0):
            raise ConfigurationError("T, s0 and sigma must be > 0")
        need = 1 if self.variant == "single" else 3
        if len(K) != need:
            raise ConfigurationError(f"variant {self.variant!r} needs {need} strike(s)")
        if any(k <= 0 for k in K) or any(b <= a for a, b in zip(K, K[1:])):
            raise ConfigurationError("strikes must be positive and strictly increasing")
        hz = tuple(float(h) for h in self.n_horizons) or (self.T,) * need
        if len(hz) != need or any(h < self.T for h in hz):
            raise ConfigurationError("need one N horizon per martingale, each >= T")
        object.__setattr__(self, "n_horizons", hz)
        if self.variant == "single":
            if self.s0 == K[0]:
                raise AdmissibilityError("single-option sandwich needs S0 != K")
        else:
            if not K[2] < self.s0:
                raise AdmissibilityError(f"three-option sandwich needs K3 < S0 (K3={K[2]}, S0={self.s0})")
            n1, n12 = math.exp(-hz[0]), math.exp(-hz[1])
            if not n1 < 1.0 - n12:
                raise AdmissibilityError(f"three-option sandwich needs N1_0 < 1 - N12_0 ({n1} vs {1 - n12})")

    @property
    def upper_branch(self) -> bool:
        return self.s0 > self.strikes[0]


@dataclass
class SandwichPaths:
    times: np.ndarray
    strikes: tuple
    s: np.ndarray  # (P, n+1), stopped
    n: dict  # name -> (P, n+1), stopped
    c: np.ndarray  # (P, m, n+1), stopped
    stop_index: np.ndarray  # -1: no stop before the horizon
    reason: np.ndarray  # codes into STOP_REASONS

    def pre_stop_mask(self) -> np.ndarray:
        cols = np.arange(self.times.size)[None, :]
        stop = self.stop_index[:, None]
        return (stop < 0) | (cols < stop)


def single_option_sandwich(spec: SandwichSpec, s_path, n_path) -> SandwichPaths:
    """Stopped C for one strike, using the branch formula of the S0 side.

    The stop is the first grid point where S - K changes sign (or hits 0);
    the stopped value keeps the S0-side formula, so that on the grid it stays
    a martingale transform of (S, N).
    """
    K = spec.strikes[0]
    S = np.atleast_2d(np.asarray(s_path, dtype=float))
    N = np.atleast_2d(np.asarray(n_path, dtype=float))
    if S[0, 0] == K:
        raise AdmissibilityError("S0 = K")
    side = np.sign(S[:, :1] - K)
    crossed = np.sign(S - K) != side
    crossed[:, 0] = False
    stop = _first(crossed)
    S, N = _freeze(S, stop), _freeze(N, stop)
    if spec.upper_branch:
        C = S - (1.0 - N) * K
    else:
        C = N * S
    reason = np.where(stop >= 0, 1, 0).astype(np.int8)
    times = np.arange(S.shape[1]) * (spec.T / (S.shape[1] - 1))
    return SandwichPaths(times, spec.strikes, S, {"N": N}, C[:, None, :], stop, reason)


def three_option_sandwich(spec: SandwichSpec, s_path, n1, n12, n23) -> SandwichPaths:
    K1, K2, K3 = spec.strikes
    S = np.atleast_2d(np.asarray(s_path, dtype=float))
    N1, N12, N23 = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (n1, n12, n23))
    if np.any(S[:, 0] <= K3):
        raise AdmissibilityError("three-option sandwich needs K3 < S0")
    s_hit = S <= K3
    n_hit = N1 >= 1.0 - N12
    stop = _first(s_hit | n_hit)
    reason = np.zeros(stop.shape, dtype=np.int8)
    rows = stop >= 0
    at = np.where(rows, stop, 0)
    idx = np.arange(stop.size)
    reason[rows & s_hit[idx, at]] = 2
    reason[rows & ~s_hit[idx, at] & n_hit[idx, at]] = 3
    S, N1, N12, N23 = (_freeze(x, stop) for x in (S, N1, N12, N23))
    C1 = S - (1.0 - N1) * K1
    C2 = C1 - N12 * (K2 - K1)
    C3 = C2 - N23 * N12 * (K3 - K2)
    times = np.arange(S.shape[1]) * (spec.T / (S.shape[1] - 1))
    return SandwichPaths(
        times, spec.strikes, S, {"N1": N1, "N12": N12, "N23": N23}, np.stack([C1, C2, C3], axis=1), stop, reason
    )


def simulate_sandwich(spec: SandwichSpec, grid: TimeGrid, paths, seed: int = 0) -> SandwichPaths:
    """Simulate the construction for the given path indices."""
    if abs(grid.horizon - spec.T) > 1e-9 * spec.T:
        raise ConfigurationError("the grid must cover [0, T] exactly")
    paths = np.asarray(paths)
    S = gbm_paths(seed, paths, spec.s0, spec.sigma, grid)
    channels = (CH_N1,) if spec.variant == "single" else (CH_N1, CH_N12, CH_N23)
    Ns = [
        bounded_unit_martingale(brownian_paths(seed, paths, ch, grid), hz, grid.dt)
        for ch, hz in zip(channels, spec.n_horizons)
    ]
    if spec.variant == "single":
        return single_option_sandwich(spec, S, Ns[0])
    return three_option_sandwich(spec, S, *Ns)


# ---------------------------------------------------------------------------
# IRV extraction


@dataclass(frozen=True)
class IrvExtraction:
    omega: np.ndarray
    stop_index: int | None  # first price-band stop


def _price_band_stop(c, s, K, band: StoppingBand) -> np.ndarray:
    hit = (c <= np.maximum(s - K, 0.0) + band.lower) | (c >= s - band.lower)
    return _first(hit)


def _outside(x, lower):
    # NaN compares false and therefore counts as outside
    return ~((x > lower) & (x < 1.0))


def extract_irv(c_path, s_path, K: float, band: StoppingBand, declared_stop: int | None = None) -> IrvExtraction:
    """omega_i = implied_root_variance(k_i, C_i / S_i)^2, stopped at the price band.

    The price band stops when C <= (S - K)+ + 1/n or C >= S - 1/n. Points
    strictly before ``declared_stop`` (the price model's own stop; -1 for a
    path that never stops) must lie strictly inside ((S - K)+, S), otherwise
    :class:`InconsistencyFault` is raised. Without ``declared_stop`` the same
    applies to points before the price-band stop. At the stop the normalized
    price is clipped into its domain and omega is frozen.
    """
    c = np.asarray(c_path, dtype=float)
    s = np.asarray(s_path, dtype=float)
    if c.shape != s.shape or c.ndim != 1:
        raise ValueError("c_path and s_path must be 1-d and of equal length")
    k = np.log(K / s)
    x = c / s
    lower = np.maximum(-np.expm1(k), 0.0)
    stop = int(_price_band_stop(c[None, :], s[None, :], K, band)[0])
    if declared_stop is None:
        live_end = c.size if stop < 0 else stop
    else:
        live_end = c.size if declared_stop < 0 else int(declared_stop)
    bad = np.nonzero(_outside(x[:live_end], lower[:live_end]))[0]
    if bad.size:
        i = int(bad[0])
        raise InconsistencyFault(
            f"C/S={x[i]!r} outside ({lower[i]!r}, 1) at index {i}, before the declared stop"
        )
    end = c.size if stop < 0 else stop
    omega = np.empty_like(c)
    omega[:end] = np.asarray(implied_root_variance(k[:end], x[:end])) ** 2
    if stop >= 0:
        xs = min(max(x[stop], lower[stop]), 1.0)
        omega[stop:] = float(implied_root_variance(k[stop], xs)) ** 2
    return IrvExtraction(omega=omega, stop_index=None if stop < 0 else stop)


def extract_irv_batch(c, s, K: float, band: StoppingBand, declared_stop=None):
    """Vectorized extraction over rows; returns (omega, stop_index, fault_count).

    Faults are points before the declared stop (or, without one, before the
    price-band stop) lying outside ((S - K)+, S).
    """
    c = np.asarray(c, dtype=float)
    s = np.asarray(s, dtype=float)
    stop = _price_band_stop(c, s, K, band)
    cols = np.arange(c.shape[1])[None, :]
    ref = stop if declared_stop is None else np.asarray(declared_stop)
    live = (ref[:, None] < 0) | (cols < ref[:, None])
    k = np.log(K / s)
    x = c / s
    lower = np.maximum(-np.expm1(k), 0.0)
    faults = int((live & _outside(x, lower)).sum())
    xc = np.clip(np.nan_to_num(x, nan=1.0), lower, 1.0)
    v = np.asarray(implied_root_variance(k, xc))
    omega = _freeze(v * v, stop)
    return omega, stop, faults


# ---------------------------------------------------------------------------
# ensemble experiment


@dataclass
class SandwichReport:
    spec: SandwichSpec
    n_paths: int
    prestop_violations: int
    option_stats: list
    bum_stats: EnsembleStats | None
    stop_counts: dict
    irv_faults: int | None = None
    irv_min_omega: float | None = None
    irv_max_omega: float | None = None
    increment_correlation: float = 0.0
    increment_correlation_se: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        ok = self.prestop_violations == 0
        ok &= all(abs(st.drift_z_score) <= 3 for st in self.option_stats)
        if self.bum_stats is not None:
            ok &= abs(self.bum_stats.drift_z_score) <= 3
        if self.irv_faults is not None:
            ok &= self.irv_faults == 0
        return bool(ok)

    def to_dict(self) -> dict:
        return {
            "variant": self.spec.variant,
            "strikes": list(self.spec.strikes),
            "n_paths": self.n_paths,
            "prestop_violations": self.prestop_violations,
            "option_stats": [st.to_dict() for st in self.option_stats],
            "bum_stats": None if self.bum_stats is None else self.bum_stats.to_dict(),
            "stop_counts": self.stop_counts,
            "irv_faults": self.irv_faults,
            "irv_min_omega": self.irv_min_omega,
            "irv_max_omega": self.irv_max_omega,
            "increment_correlation": self.increment_correlation,
            "increment_correlation_se": self.increment_correlation_se,
            "passed": self.passed,
        }


def _prestop_violations(sp: SandwichPaths) -> int:
    pre = sp.pre_stop_mask()
    if sp.c.shape[1] == 1:
        K = sp.strikes[0]
        C = sp.c[:, 0, :]
        bad = (C <= np.maximum(sp.s - K, 0.0)) | (C >= sp.s)
        return int((bad & pre).sum())
    total = 0
    for i in range(sp.times.size):
        rows = pre[:, i]
        if rows.any():
            total += int(violation_counts(sp.s[rows, i], sp.strikes, sp.c[rows, :, i]).sum())
    return total


def sandwich_experiment(
    spec: SandwichSpec,
    grid: TimeGrid,
    n_paths: int,
    seed: int = 0,
    chunk_size: int = 1000,
    extract_band: StoppingBand | None = None,
    on_chunk=None,
) -> SandwichReport:
    """Simulate ``n_paths`` paths in chunks and aggregate the diagnostics.

    ``extract_band`` turns on IRV extraction for single-option runs.
    ``on_chunk(first_path, SandwichPaths)`` sees every chunk (e.g. to dump CSV).
    """
    m = 1 if spec.variant == "single" else 3
    terminal = [[] for _ in range(m)]
    initial = None
    bum_terminal = []
    violations = 0
    faults = 0 if (extract_band is not None and spec.variant == "single") else None
    om_min, om_max = math.inf, -math.inf
    reasons = np.zeros(len(STOP_REASONS), dtype=np.int64)
    dS_all, dN_all = [], []
    for lo in range(0, n_paths, chunk_size):
        idx = np.arange(lo, min(lo + chunk_size, n_paths))
        sp = simulate_sandwich(spec, grid, idx, seed)
        if on_chunk is not None:
            on_chunk(lo, sp)
        if initial is None:
            initial = sp.c[0, :, 0].copy()
        for j in range(m):
            terminal[j].append(sp.c[:, j, -1])
        first_n = next(iter(sp.n.values()))
        # the unstopped martingale: rebuild N from the same stream
        z = brownian_paths(seed, idx, CH_N1, grid)
        bum_terminal.append(bounded_unit_martingale(z, spec.n_horizons[0], grid.dt)[:, -1])
        violations += _prestop_violations(sp)
        reasons += np.bincount(sp.reason, minlength=len(STOP_REASONS))
        pre = sp.pre_stop_mask()
        inc = pre[:, 1:] & pre[:, :-1]
        dS_all.append(np.diff(sp.s, axis=1)[inc])
        dN_all.append(np.diff(first_n, axis=1)[inc])
        if faults is not None:
            omega, stop, f = extract_irv_batch(sp.c[:, 0, :], sp.s, spec.strikes[0], extract_band, sp.stop_index)
            faults += f
            cols = np.arange(omega.shape[1])[None, :]
            pre_band = (stop[:, None] < 0) | (cols < stop[:, None])
            vals = omega[pre_band]
            if vals.size:
                if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
                    faults += int((~np.isfinite(vals) | (vals <= 0)).sum())
                om_min = min(om_min, float(vals[np.isfinite(vals)].min()))
                om_max = max(om_max, float(vals[np.isfinite(vals)].max()))
    stats = []
    for j in range(m):
        x = np.concatenate(terminal[j])
        mean, se = mean_and_se(x)
        stats.append(EnsembleStats(mean, se, float(initial[j]), z_score(mean, float(initial[j]), se), 0.0, 0.0, x.size, 0))
    bt = np.concatenate(bum_terminal)
    mean, se = mean_and_se(bt)
    n0 = math.exp(-spec.n_horizons[0])
    bum = EnsembleStats(mean, se, n0, z_score(mean, n0, se), 0.0, 0.0, bt.size, 0)
    dS = np.concatenate(dS_all)
    dN = np.concatenate(dN_all)
    corr = float(np.corrcoef(dS, dN)[0, 1]) if dS.size > 2 else 0.0
    corr_se = 1.0 / math.sqrt(max(dS.size - 3, 1))
    return SandwichReport(
        spec=spec,
        n_paths=n_paths,
        prestop_violations=violations,
        option_stats=stats,
        bum_stats=bum,
        stop_counts={r: int(c) for r, c in zip(STOP_REASONS, reasons)},
        irv_faults=faults,
        irv_min_omega=None if faults is None else om_min,
        irv_max_omega=None if faults is None else om_max,
        increment_correlation=corr,
        increment_correlation_se=corr_se,
    )
