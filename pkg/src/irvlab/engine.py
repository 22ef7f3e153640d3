"""Monte Carlo simulation of the coupled (S, omega) system with band stopping.

Scheme per step i -> i+1 for a live path, with V the step variance
(sigma^2 dt, or the exact integral when the model provides one) and
``sd = sign(sigma) sqrt(V)``:

    S     <- S exp(sd xi_W - V / 2)
    omega <- omega + a V + (b xi_Z + c xi_W) omega sd

The band is tested on the post-step omega; from the first exit on, the
path is frozen. A negative Euler omega is clamped to 0 and counts as a
lower-band exit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from . import rng
from .blackscholes import bs_call
from .core import CoefficientModel, StoppingBand, no_drift_a

REASONS = ("horizon", "lower-band", "upper-band", "invalid")
HORIZON, LOWER, UPPER, INVALID = range(4)

_INV_SQRT_2PI = 0.3989422804014326779399460599343818684758586311649


class ConfigurationError(ValueError):
    pass


class EmptyEnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError("steps must be an integer >= 1")

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @classmethod
    def covering(cls, T: float, dt: float) -> "TimeGrid":
        steps = int(round(T / dt))
        if not math.isclose(steps * dt, T, rel_tol=1e-9):
            raise ConfigurationError(f"T={T} is not a multiple of dt={dt}")
        return cls(dt=T / steps, steps=steps)


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    master_seed: int = 0
    band: StoppingBand = field(default_factory=lambda: StoppingBand(1e6))
    antithetic: bool = False
    workers: int = 1
    chunk_size: int = 4096
    store_paths: bool = True

    def __post_init__(self):
        if self.n_paths < 1:
            raise ConfigurationError("n_paths must be >= 1")
        if self.antithetic and self.n_paths % 2:
            raise ConfigurationError("antithetic sampling needs an even number of paths")
        if self.workers < 1 or self.chunk_size < 1:
            raise ConfigurationError("workers and chunk_size must be >= 1")


@dataclass(frozen=True)
class StoppedPath:
    times: np.ndarray
    s_values: np.ndarray
    omega_values: np.ndarray
    call_values: np.ndarray
    stop_index: int | None
    stop_reason: str
    valid: bool = True


@dataclass
class PathEnsemble:
    """Result of :func:`simulate`. Full paths are kept only when stored."""

    times: np.ndarray
    strike: float
    s0: float
    omega0: float
    initial_call: float
    antithetic: bool
    terminal_s: np.ndarray
    terminal_omega: np.ndarray
    terminal_call: np.ndarray
    stop_index: np.ndarray  # -1 when the horizon was reached without a band exit
    stop_reason: np.ndarray  # codes into REASONS
    valid: np.ndarray
    realized_qv: np.ndarray
    predicted_qv: np.ndarray
    s: np.ndarray | None = None
    omega: np.ndarray | None = None
    call: np.ndarray | None = None

    def __len__(self) -> int:
        return self.terminal_call.size

    def __getitem__(self, i: int) -> StoppedPath:
        if self.s is None:
            raise ValueError("paths were not stored; rerun with store_paths=True")
        idx = int(self.stop_index[i])
        return StoppedPath(
            times=self.times,
            s_values=self.s[i],
            omega_values=self.omega[i],
            call_values=self.call[i],
            stop_index=None if idx < 0 else idx,
            stop_reason=REASONS[self.stop_reason[i]],
            valid=bool(self.valid[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def n_invalid(self) -> int:
        return int((~self.valid).sum())

    def reason_counts(self) -> dict:
        return {r: int((self.stop_reason == j).sum()) for j, r in enumerate(REASONS)}


def call_price(s, omega, strike):
    s = np.asarray(s, dtype=float)
    return s * bs_call(np.log(strike / s), np.sqrt(np.maximum(omega, 0.0)))


def qv_density(s, omega, b, c, strike):
    """d<C>/(sigma^2 dt) for C = S bs_call(k, sqrt(omega)) under the master SDE.

    [S N(d+) + c K sqrt(w) phi(d-) / 2]^2 + [b K sqrt(w) phi(d-) / 2]^2
    """
    v = np.sqrt(omega)
    dp = -np.log(strike / s) / v + 0.5 * v
    dm = dp - v
    half = 0.5 * strike * v * _INV_SQRT_2PI * np.exp(-0.5 * dm * dm)
    return (s * ndtr(dp) + c * half) ** 2 + (b * half) ** 2


def _simulate_chunk(model, strike, s0, omega0, times, variances, cfg, paths):
    P = paths.size
    steps = times.size - 1
    dt = times[1] - times[0]
    band = cfg.band
    xw = rng.normal_block(cfg.master_seed, paths, rng.CHANNEL_W, steps, cfg.antithetic)
    xz = rng.normal_block(cfg.master_seed, paths, rng.CHANNEL_Z, steps, cfg.antithetic)

    s = np.full(P, float(s0))
    om = np.full(P, float(omega0))
    c_now = np.full(P, call_price(s0, omega0, strike))
    aux = model.init_aux(P)
    live = np.ones(P, dtype=bool)
    valid = np.ones(P, dtype=bool)
    stop_index = np.full(P, -1, dtype=np.int64)
    reason = np.full(P, HORIZON, dtype=np.int8)
    rqv = np.zeros(P)
    pqv = np.zeros(P)
    if cfg.store_paths:
        S_all = np.empty((P, steps + 1))
        W_all = np.empty((P, steps + 1))
        C_all = np.empty((P, steps + 1))
        S_all[:, 0], W_all[:, 0], C_all[:, 0] = s, om, c_now

    for i in range(steps):
        idx = np.nonzero(live)[0]
        if idx.size:
            t = times[i]
            si, oi = s[idx], om[idx]
            ki = np.log(strike / si)
            aux_i = model.select_aux(aux, idx)
            coef = model.coefficients(t, si, oi, ki, aux_i)
            sig = np.broadcast_to(np.asarray(coef.sigma, dtype=float), si.shape)
            b = np.broadcast_to(np.asarray(coef.b, dtype=float), si.shape)
            cc = np.broadcast_to(np.asarray(coef.c, dtype=float), si.shape)
            a = no_drift_a(b, cc, oi, ki) if coef.a is None else np.broadcast_to(coef.a, si.shape)
            if variances is None:
                var = sig * sig * dt
                sd = sig * math.sqrt(dt)
            else:
                var = np.full(si.shape, variances[i])
                sd = np.sign(sig) * math.sqrt(variances[i])
            w_i, z_i = xw[idx, i], xz[idx, i]
            pqv[idx] += qv_density(si, oi, b, cc, strike) * var
            with np.errstate(over="ignore", invalid="ignore"):
                s_new = si * np.exp(sd * w_i - 0.5 * var)
                o_new = oi + a * var + (b * z_i + cc * w_i) * oi * sd
            if aux is not None:
                model.assign_aux(aux, idx, model.step_aux(aux_i, t, sd, var, z_i))
            bad = ~(np.isfinite(s_new) & np.isfinite(o_new) & (s_new > 0))
            neg = ~bad & (o_new < 0)
            o_new = np.where(neg, 0.0, o_new)
            c_new = np.full(idx.size, np.nan)
            ok = ~bad
            c_new[ok] = call_price(s_new[ok], o_new[ok], strike)
            rqv[idx[ok]] += (c_new[ok] - c_now[idx[ok]]) ** 2
            lo_hit = ok & (o_new <= band.lower)
            hi_hit = ok & (o_new >= band.upper)
            # invalid paths keep their last finite state
            s[idx[ok]] = s_new[ok]
            om[idx[ok]] = o_new[ok]
            c_now[idx[ok]] = c_new[ok]
            ended = bad | lo_hit | hi_hit
            stop_index[idx[ended]] = i + 1
            reason[idx[lo_hit]] = LOWER
            reason[idx[hi_hit]] = UPPER
            reason[idx[bad]] = INVALID
            valid[idx[bad]] = False
            live[idx[ended]] = False
        if cfg.store_paths:
            S_all[:, i + 1], W_all[:, i + 1], C_all[:, i + 1] = s, om, c_now

    out = dict(
        terminal_s=s, terminal_omega=om, terminal_call=c_now, stop_index=stop_index,
        stop_reason=reason, valid=valid, realized_qv=rqv, predicted_qv=pqv,
    )
    if cfg.store_paths:
        out.update(s=S_all, omega=W_all, call=C_all)
    return out


def simulate(model: CoefficientModel, K: float, s0: float, omega0: float, grid: TimeGrid, cfg: SimConfig) -> PathEnsemble:
    """Simulate ``cfg.n_paths`` stopped paths of (S, omega, C) on ``grid``."""
    if not (K > 0 and s0 > 0):
        raise ConfigurationError("strike and s0 must be > 0")
    if not cfg.band.contains(omega0):
        raise ConfigurationError(f"omega0={omega0} is not strictly inside the band ({cfg.band.lower}, {cfg.band.upper})")
    T = getattr(model, "maturity", None)
    if T is not None and grid.horizon > T * (1 + 1e-12):
        raise ConfigurationError(f"grid horizon {grid.horizon} exceeds the model maturity {T}")
    times = grid.times()
    variances = None
    if model.step_variance(0.0, grid.dt) is not None:
        variances = np.array([model.step_variance(times[i], times[i + 1]) for i in range(grid.steps)])

    chunks = [np.arange(lo, min(lo + cfg.chunk_size, cfg.n_paths)) for lo in range(0, cfg.n_paths, cfg.chunk_size)]

    def run(p):
        return _simulate_chunk(model, K, s0, omega0, times, variances, cfg, p)

    if cfg.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(p) for p in chunks]
    merged = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    return PathEnsemble(
        times=times, strike=float(K), s0=float(s0), omega0=float(omega0),
        initial_call=float(call_price(s0, omega0, K)), antithetic=cfg.antithetic, **merged,
    )


@dataclass(frozen=True)
class EnsembleStats:
    mean_terminal_call: float
    std_error: float
    initial_call: float
    drift_z_score: float
    realized_qv_mean: float
    predicted_qv_mean: float
    n_valid: int
    n_invalid: int

    def to_dict(self) -> dict:
        return asdict(self)


def mean_and_se(x: np.ndarray, antithetic: bool = False) -> tuple[float, float]:
    """Sample mean and its standard error; antithetic pairs are averaged first."""
    x = np.asarray(x, dtype=float)
    if antithetic and x.size % 2 == 0:
        x = 0.5 * (x[0::2] + x[1::2])
    if x.size < 2:
        raise EmptyEnsembleError("need at least two observations")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def z_score(mean: float, target: float, se: float) -> float:
    diff = mean - target
    if se > 0:
        return diff / se
    if diff == 0:
        return 0.0
    return math.copysign(math.inf, diff)


def martingale_test(paths: PathEnsemble) -> EnsembleStats:
    """Terminal stopped-call statistics against the initial price."""
    v = paths.valid
    if paths.antithetic:
        # keep only complete antithetic pairs
        pair_ok = v[0::2] & v[1::2]
        v = np.repeat(pair_ok, 2)
    if v.sum() == 0:
        raise EmptyEnsembleError("every path is invalid")
    mean, se = mean_and_se(paths.terminal_call[v], paths.antithetic)
    return EnsembleStats(
        mean_terminal_call=mean,
        std_error=se,
        initial_call=paths.initial_call,
        drift_z_score=z_score(mean, paths.initial_call, se),
        realized_qv_mean=float(paths.realized_qv[paths.valid].mean()),
        predicted_qv_mean=float(paths.predicted_qv[paths.valid].mean()),
        n_valid=paths.n_valid,
        n_invalid=paths.n_invalid,
    )


@dataclass(frozen=True)
class QvResult:
    realized: float
    predicted: float
    rel_error: float
    rel_std_error: float = 0.0  # standard error of (realized - predicted) / predicted


def qv_check(paths: PathEnsemble, model: CoefficientModel | None = None, K: float | None = None) -> QvResult:
    """Compare realized sum (dC)^2 with the Ito prediction int density sigma^2 dt.

    When the ensemble stores full paths and ``model`` is given, the prediction
    is recomputed from the stored states with that model; otherwise the
    accumulators from the simulation are used.
    """
    v = paths.valid
    realized_per_path = paths.realized_qv[v]
    if model is not None and paths.s is not None and model.init_aux(1) is None:
        K = paths.strike if K is None else K
        times = paths.times
        dt = times[1] - times[0]
        predicted_per_path = np.zeros(int(v.sum()))
        S, W = paths.s[v], paths.omega[v]
        stop = paths.stop_index[v]
        for i in range(times.size - 1):
            live = (stop < 0) | (stop > i)
            if not live.any():
                break
            si, oi = S[live, i], W[live, i]
            coef = model.coefficients(times[i], si, oi, np.log(K / si))
            sig = np.broadcast_to(np.asarray(coef.sigma, dtype=float), si.shape)
            var_exact = model.step_variance(times[i], times[i + 1])
            var = sig * sig * dt if var_exact is None else np.full(si.shape, var_exact)
            b = np.broadcast_to(np.asarray(coef.b, dtype=float), si.shape)
            c = np.broadcast_to(np.asarray(coef.c, dtype=float), si.shape)
            predicted_per_path[live] += qv_density(si, oi, b, c, K) * var
    else:
        predicted_per_path = paths.predicted_qv[v]
    realized = float(realized_per_path.mean())
    predicted = float(predicted_per_path.mean())
    if predicted > 0:
        rel = abs(realized - predicted) / predicted
        diff = realized_per_path - predicted_per_path
        rel_se = float(diff.std(ddof=1) / math.sqrt(diff.size) / predicted) if diff.size > 1 else 0.0
    else:
        rel = 0.0 if realized == 0 else math.inf
        rel_se = 0.0
    return QvResult(realized=realized, predicted=predicted, rel_error=rel, rel_std_error=rel_se)
