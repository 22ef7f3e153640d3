"""Symmetric SSVI smile driven by a stochastic at-the-money variance theta.

    omega(k) = (theta + A) / 2,   A = sqrt(theta^2 + psi^2 k^2)
    d theta  = (psi - 4)(psi + 4) / 16 sigma^2 dt - psi sigma dZ

with Z independent of the asset driver W. Every strike's omega then solves
the master SDE with the coefficients of :func:`ssvi_master_coefficients`.
The smile is free of static arbitrage iff psi^2 <= frak_B(theta).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .blackscholes import bs_call
from .core import Coefficients, CoefficientModel, StoppingBand
from .engine import ConfigurationError, TimeGrid
from .static_arb import SmileSnapshot, violation_counts

JUNCTION = 4.0 - 1e-12
INVERSE_MAX_ITER = 200
INVERSE_TOL = 1e-12


class SsviDomainError(ValueError):
    pass


@dataclass(frozen=True)
class SsviParams:
    psi: float
    theta0: float
    T: float
    bounded: bool = True  # require psi < 4 and theta0 above the bound

    def __post_init__(self):
        if not self.psi >= 0:
            raise ConfigurationError(f"psi must be >= 0, got {self.psi}")
        if not self.theta0 > 0:
            raise ConfigurationError(f"theta0 must be > 0, got {self.theta0}")
        if not self.T > 0:
            raise ConfigurationError("T must be > 0")
        if self.bounded:
            if not self.psi < 4:
                raise ConfigurationError(f"bounded runs need psi < 4, got {self.psi}")
            floor = frak_B_inverse(self.psi**2)
            if not self.theta0 > floor:
                raise ConfigurationError(f"theta0={self.theta0} must exceed frak_B_inverse(psi^2)={floor}")


@dataclass(frozen=True)
class SsviSmilePoint:
    theta: float
    psi: float
    k: float
    A: float
    omega: float


def ssvi_omega(theta: float, psi: float, k: float) -> SsviSmilePoint:
    if not theta > 0:
        raise SsviDomainError(f"theta must be > 0, got {theta}")
    A = math.hypot(theta, psi * k)
    return SsviSmilePoint(theta=theta, psi=psi, k=k, A=A, omega=0.5 * (theta + A))


def smile_omega(theta, psi, k):
    """Vectorized omega(k); theta, k broadcast."""
    theta = np.asarray(theta, dtype=float)
    return 0.5 * (theta + np.hypot(theta, psi * np.asarray(k, dtype=float)))


def ssvi_theta_drift_diffusion(psi: float) -> tuple[float, float]:
    """(drift per sigma^2, Z-loading per sigma) of theta."""
    return (psi - 4.0) * (psi + 4.0) / 16.0, -psi


def master_coefficients(theta, psi, k):
    """Vectorized (a, b, c) of the master SDE for the SSVI smile."""
    theta = np.asarray(theta, dtype=float)
    k = np.asarray(k, dtype=float)
    A = np.hypot(theta, psi * k)
    om = 0.5 * (theta + A)
    p2 = psi * psi
    a = 0.5 * (
        (1.0 + theta / A) * (psi - 4.0) * (psi + 4.0) / 16.0
        + p2 * k / (2.0 * A)
        + (p2 * p2 * k * k + theta * theta * p2) / (2.0 * A**3)
    )
    b = -(1.0 + theta / A) * psi / (2.0 * om)
    c = -p2 * k / (2.0 * A * om)
    return a, b, c


def ssvi_master_coefficients(point: SsviSmilePoint, psi: float | None = None) -> tuple[float, float, float]:
    psi = point.psi if psi is None else psi
    if not (point.theta > 0 and point.A > 0 and point.omega > 0):
        raise SsviDomainError("degenerate smile point")
    a, b, c = master_coefficients(point.theta, psi, point.k)
    return float(a), float(b), float(c)


# ---------------------------------------------------------------------------
# static-arbitrage bound


def frak_B(theta):
    """Largest psi^2 keeping the smile at level theta free of static arbitrage."""
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0) or np.any(np.isnan(th)):
        raise SsviDomainError("theta must be >= 0")
    out = np.full(th.shape, 16.0)
    low = th < JUNCTION
    if np.any(low):
        t = th[low]
        u = 2.0 / (1.0 - t / 4.0)
        z = u + np.sqrt(u * u + u)
        out[low] = 16.0 * t * z * (z + 1.0) / (8.0 * (z - 2.0) + t * z * (z - 1.0))
    return float(out) if np.ndim(theta) == 0 else out


def frak_B_inverse(x: float) -> float:
    """theta in [0, 4) with frak_B(theta) = x, by bisection."""
    if not 0.0 <= x < 16.0:
        raise SsviDomainError(f"frak_B_inverse needs x in [0, 16), got {x}")
    if x == 0.0:
        return 0.0
    lo, hi = 0.0, 4.0
    for _ in range(INVERSE_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if frak_B(mid) < x:
            lo = mid
        else:
            hi = mid
        if hi - lo <= INVERSE_TOL:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class MonotonicityCertificate:
    n_points: int
    min_increment: float
    nondecreasing: bool
    strictly_increasing: bool


def certify_monotone(n_points: int = 100_000) -> MonotonicityCertificate:
    """Evaluate frak_B on a uniform grid of [0, 4) and inspect increments."""
    grid = np.linspace(0.0, 4.0, n_points, endpoint=False)
    d = np.diff(frak_B(grid))
    return MonotonicityCertificate(
        n_points=n_points,
        min_increment=float(d.min()),
        nondecreasing=bool(np.all(d >= 0)),
        strictly_increasing=bool(np.all(d > 0)),
    )


# ---------------------------------------------------------------------------
# snapshots and simulation


def ssvi_snapshot(s: float, theta: float, psi: float, strikes) -> SmileSnapshot:
    strikes = np.asarray(strikes, dtype=float)
    k = np.log(strikes / s)
    calls = s * bs_call(k, np.sqrt(smile_omega(theta, psi, k)))
    return SmileSnapshot(s=float(s), strikes=tuple(strikes), calls=tuple(calls))


TAU_REASONS = ("horizon", "theta-band", "bound-crossing")


@dataclass
class SsviRun:
    params: SsviParams
    sigma: float
    times: np.ndarray
    strikes: np.ndarray
    s: np.ndarray  # (paths, steps + 1), frozen after tau
    theta: np.ndarray
    tau_step: np.ndarray  # -1 when tau lies beyond the horizon
    reason: np.ndarray  # codes into TAU_REASONS
    bound_floor: float

    def calls_at(self, step: int) -> np.ndarray:
        """Call prices (paths, strikes) at a grid step."""
        s = self.s[:, step][:, None]
        k = np.log(self.strikes[None, :] / s)
        om = smile_omega(self.theta[:, step][:, None], self.params.psi, k)
        return s * bs_call(k, np.sqrt(om))

    def snapshot(self, path: int, step: int) -> SmileSnapshot:
        return ssvi_snapshot(self.s[path, step], self.theta[path, step], self.params.psi, self.strikes)

    def diagnostics(self, path: int) -> dict:
        ts = int(self.tau_step[path])
        return {"tau_step": None if ts < 0 else ts, "reason": TAU_REASONS[self.reason[path]]}

    def pre_tau_violations(self) -> np.ndarray:
        """Number of static-arbitrage violations per path strictly before tau."""
        steps = self.times.size - 1
        out = np.zeros(self.s.shape[0], dtype=np.int64)
        for i in range(steps + 1):
            before = (self.tau_step < 0) | (self.tau_step > i)
            if not before.any():
                break
            counts = violation_counts(self.s[before, i], self.strikes, self.calls_at(i)[before])
            out[before] += counts
        return out


def ssvi_simulate(
    p: SsviParams,
    sigma: float,
    strikes,
    grid: TimeGrid,
    n_paths: int,
    seed: int = 0,
    band: StoppingBand | None = None,
    s0: float = 1.0,
) -> SsviRun:
    """Simulate (S, theta) with S lognormal on W and theta by Euler on Z.

    The run stops at tau = xi ^ inf{t: theta_t < frak_B_inverse(psi^2)},
    where xi is the exit of theta from the band (a non-positive Euler theta
    also counts as a band exit).
    """
    if not sigma > 0:
        raise ConfigurationError("sigma must be > 0")
    if grid.horizon > p.T * (1 + 1e-12):
        raise ConfigurationError("grid horizon exceeds T")
    band = band or StoppingBand(1e6)
    strikes = np.asarray(strikes, dtype=float)
    if strikes.ndim != 1 or strikes.size == 0 or np.any(np.diff(strikes) <= 0) or np.any(strikes <= 0):
        raise ConfigurationError("strikes must be positive and strictly increasing")
    floor = frak_B_inverse(p.psi**2) if p.psi < 4 else math.inf
    steps = grid.steps
    paths = np.arange(n_paths)
    xw = rng.normal_block(seed, paths, rng.CHANNEL_W, steps)
    xz = rng.normal_block(seed, paths, rng.CHANNEL_Z, steps)
    drift, zload = ssvi_theta_drift_diffusion(p.psi)
    var = sigma * sigma * grid.dt
    sd = sigma * math.sqrt(grid.dt)

    S = np.empty((n_paths, steps + 1))
    TH = np.empty((n_paths, steps + 1))
    S[:, 0], TH[:, 0] = s0, p.theta0
    tau = np.full(n_paths, -1, dtype=np.int64)
    reason = np.zeros(n_paths, dtype=np.int8)
    live = np.ones(n_paths, dtype=bool)
    for i in range(steps):
        s_new = S[:, i] * np.exp(sd * xw[:, i] - 0.5 * var)
        th_new = TH[:, i] + drift * var + zload * sd * xz[:, i]
        S[:, i + 1] = np.where(live, s_new, S[:, i])
        TH[:, i + 1] = np.where(live, th_new, TH[:, i])
        band_hit = live & ((th_new <= band.lower) | (th_new >= band.upper))
        bound_hit = live & ~band_hit & (th_new < floor)
        tau[band_hit | bound_hit] = i + 1
        reason[band_hit] = 1
        reason[bound_hit] = 2
        live &= ~(band_hit | bound_hit)
    return SsviRun(
        params=p, sigma=sigma, times=grid.times(), strikes=strikes, s=S, theta=TH,
        tau_step=tau, reason=reason, bound_floor=floor,
    )


@dataclass(frozen=True)
class SsviStrikeModel(CoefficientModel):
    """Master-SDE coefficients for one strike of the SSVI smile.

    The auxiliary state is theta, advanced on the same Z increments as the
    omega loading b; sigma is constant.
    """

    psi: float
    theta0: float
    sigma: float
    name: str = "ssvi-strike"
    maturity: float | None = None

    def init_aux(self, n):
        return np.full(n, float(self.theta0))

    def coefficients(self, t, s, omega, k, aux=None):
        theta = np.maximum(aux, 1e-300)
        _, b, c = master_coefficients(theta, self.psi, k)
        return Coefficients(sigma=np.full(np.shape(s), self.sigma), b=b, c=c)

    def step_aux(self, aux, t, sig_sqrt_dt, var, xi_z):
        drift, zload = ssvi_theta_drift_diffusion(self.psi)
        return aux + drift * var + zload * sig_sqrt_dt * xi_z

    def describe(self):
        return {"name": self.name, "psi": self.psi, "theta0": self.theta0, "sigma": self.sigma}
