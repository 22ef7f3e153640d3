"""Normalized Black-Scholes kernel.

Prices are expressed per unit of spot: ``c = C / S`` as a function of the
log-moneyness ``k = ln(K / S)`` and the root variance ``v = sqrt(omega)``.
With zero rates,

    c(k, v) = N(d+) - e^k N(d-),   d+- = -k / v +- v / 2,

with the limits ``(1 - e^k)+`` at ``v = 0`` and ``1`` at ``v = +inf``.

All functions accept scalars or numpy arrays and return a Python float
when every input is scalar.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr, ndtri

# The +inf root variance. It is accepted and returned as a value but the
# kernel routes it through boundary branches before any d+- arithmetic.
V_INF = math.inf

SNAP_TOL = 1e-14
BRACKET_LO = 1e-12
BRACKET_HI = 200.0
_MAX_ITER = 100
_INV_SQRT_2PI = 0.3989422804014326779399460599343818684758586311649


class BoundaryError(ValueError):
    """Raised when an interior-only formula receives v = 0 or v = +inf."""


class PriceDomainError(ValueError):
    """A normalized call price outside [(1 - e^k)+, 1].

    ``bound`` is ``"lower"`` or ``"upper"`` and names the breached side.
    """

    def __init__(self, message: str, bound: str):
        super().__init__(message)
        self.bound = bound


def _scalar_out(out: np.ndarray, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(out)
    return out


def norm_cdf(x):
    """Standard normal CDF (cephes ndtr, erfc-based in the tails)."""
    out = ndtr(np.asarray(x, dtype=float))
    return _scalar_out(out, x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return _scalar_out(out, x)


def intrinsic(k):
    """Normalized call intrinsic value ``(1 - e^k)+``."""
    k = np.asarray(k, dtype=float)
    out = np.maximum(-np.expm1(k), 0.0)
    return _scalar_out(out, k)


def _check_v(v: np.ndarray) -> None:
    if np.any(np.isnan(v)) or np.any(v < 0):
        raise ValueError("root variance must be >= 0 (or +inf)")


def d_pair(k, v):
    """Return ``(d_plus, d_minus)`` for v strictly inside (0, inf)."""
    k = np.asarray(k, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_v(v)
    if np.any(v == 0) or np.any(np.isinf(v)):
        raise BoundaryError("d+- is undefined at v = 0 and v = +inf; use the boundary branches of bs_call")
    dp = -k / v + 0.5 * v
    dm = dp - v
    return _scalar_out(dp, k, v), _scalar_out(dm, k, v)


def _call_interior(k: np.ndarray, v: np.ndarray) -> np.ndarray:
    dp = -k / v + 0.5 * v
    dm = dp - v
    # Evaluate the out-of-the-money option directly (call for k > 0, put
    # otherwise) and recover the in-the-money call by parity.
    sgn = np.where(k > 0, 1.0, -1.0)
    otm = ndtr(sgn * dp) - np.exp(k) * ndtr(sgn * dm)
    return np.where(k > 0, otm, -np.expm1(k) - otm)


def bs_call(k, v):
    """Normalized call price ``C / S``; v may be 0 or +inf."""
    k_arr = np.asarray(k, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    _check_v(v_arr)
    k_b, v_b = np.broadcast_arrays(k_arr, v_arr)
    lower = np.maximum(-np.expm1(k_b), 0.0)
    out = np.empty(k_b.shape, dtype=float)
    zero = v_b == 0
    inf = np.isinf(v_b)
    mid = ~(zero | inf)
    out[zero] = lower[zero]
    out[inf] = 1.0
    if np.any(mid):
        out[mid] = np.clip(_call_interior(k_b[mid], v_b[mid]), lower[mid], 1.0)
    return _scalar_out(out, k, v)


def bs_put(k, v):
    """Normalized put price by parity: ``bs_call + e^k - 1``."""
    k_arr = np.asarray(k, dtype=float)
    out = np.asarray(bs_call(k_arr, v)) + np.expm1(k_arr)
    return _scalar_out(out, k, v)


def vega(k, v):
    """Derivative of the normalized call in v, ``phi(d+)``; zero at the boundaries."""
    k_b, v_b = np.broadcast_arrays(np.asarray(k, dtype=float), np.asarray(v, dtype=float))
    _check_v(v_b)
    out = np.zeros(k_b.shape, dtype=float)
    mid = (v_b > 0) & ~np.isinf(v_b)
    if np.any(mid):
        dp = -k_b[mid] / v_b[mid] + 0.5 * v_b[mid]
        out[mid] = _INV_SQRT_2PI * np.exp(-0.5 * dp * dp)
    return _scalar_out(out, k, v)


def _otm_call(kappa: np.ndarray, v: np.ndarray) -> np.ndarray:
    # kappa >= 0 here
    dp = -kappa / v + 0.5 * v
    return ndtr(dp) - np.exp(kappa) * ndtr(dp - v)


def _solve_otm(kappa: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Root variance with c(kappa, v) = q for kappa >= 0, 0 < q < 1.

    Newton on ln c(v) - ln q with the bracket [BRACKET_LO, BRACKET_HI]
    maintained throughout; any step leaving the bracket is replaced by a
    bisection step in log v.
    """
    lo = np.full(q.shape, BRACKET_LO)
    hi = np.full(q.shape, BRACKET_HI)
    # inflection point of c in v; kappa = 0 uses the closed form
    v = np.sqrt(2.0 * kappa)
    atm = kappa == 0
    if np.any(atm):
        v[atm] = 2.0 * ndtri(0.5 * (1.0 + q[atm]))
    v = np.clip(v, 1e-3, 50.0)
    log_q = np.log(q)
    active = np.ones(q.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        kk, vv = kappa[idx], v[idx]
        price = _otm_call(kk, vv)
        dp = -kk / vv + 0.5 * vv
        dens = _INV_SQRT_2PI * np.exp(-0.5 * dp * dp)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.log(price) - log_q[idx]
        below = ~(g > 0)
        lo[idx] = np.where(below, np.maximum(lo[idx], vv), lo[idx])
        hi[idx] = np.where(below, hi[idx], np.minimum(hi[idx], vv))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = g * price / dens
            v_new = vv - step
        bad = ~np.isfinite(v_new) | (v_new <= lo[idx]) | (v_new >= hi[idx]) | ~np.isfinite(g)
        v_new = np.where(bad, np.sqrt(lo[idx] * hi[idx]), v_new)
        done = (np.abs(v_new - vv) <= 2e-15 * vv) | (hi[idx] - lo[idx] <= 4e-16 * hi[idx])
        v[idx] = v_new
        active[idx[done]] = False
    return v


def implied_root_variance(k, c):
    """Inverse of :func:`bs_call` in v.

    Returns 0 at the intrinsic bound and ``V_INF`` at c = 1. Prices within
    ``SNAP_TOL`` of either bound snap to it; prices further outside raise
    :class:`PriceDomainError` naming the breached bound.
    """
    k_b, c_b = np.broadcast_arrays(np.asarray(k, dtype=float), np.asarray(c, dtype=float))
    if np.any(~np.isfinite(k_b)) or np.any(np.isnan(c_b)):
        raise ValueError("k and c must be finite")
    lower = np.maximum(-np.expm1(k_b), 0.0)
    if np.any(c_b < lower - SNAP_TOL):
        i = int(np.argmax(c_b < lower - SNAP_TOL))
        raise PriceDomainError(
            f"call price {c_b.flat[i]!r} below intrinsic bound {lower.flat[i]!r} (k={k_b.flat[i]!r})", "lower"
        )
    if np.any(c_b > 1.0 + SNAP_TOL):
        i = int(np.argmax(c_b > 1.0 + SNAP_TOL))
        raise PriceDomainError(f"call price {c_b.flat[i]!r} above the upper bound 1", "upper")
    out = np.empty(k_b.shape, dtype=float)
    at_lo = c_b <= lower + SNAP_TOL
    at_hi = (c_b >= 1.0 - SNAP_TOL) & ~at_lo
    mid = ~(at_lo | at_hi)
    out[at_lo] = 0.0
    out[at_hi] = V_INF
    if np.any(mid):
        km, cm = k_b[mid], c_b[mid]
        # reduce to an out-of-the-money call: p(k, v) = e^k c(-k, v)
        q = np.where(km > 0, cm, (cm + np.expm1(km)) * np.exp(-km))
        kappa = np.abs(km)
        res = np.zeros(km.shape)
        pos = q > 0
        if np.any(pos):
            res[pos] = _solve_otm(kappa[pos], np.minimum(q[pos], 1.0))
        out[mid] = res
    return _scalar_out(out, k, c)
