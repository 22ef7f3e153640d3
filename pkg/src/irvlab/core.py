"""Algebra of the implied-remaining-variance (IRV) master SDE.

The master SDE for the implied remaining variance ``omega`` of a call with
fixed strike K reads

    d omega = a sigma^2 dt + b omega sigma dZ + c omega sigma dW,

where W drives the underlying (dS = sigma S dW) and Z is independent of W.
The stopped call ``S * bs_call(k, sqrt(omega))`` is a martingale exactly when
``a`` satisfies :func:`no_drift_a`.

Coefficient models bundle (sigma, b, c) and optionally an explicit drift
``a``; the simulator lives in :mod:`irvlab.engine`.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.integrate import quad


class DegenerateStateError(ValueError):
    """omega = 0 where the formula divides by omega."""


class SingularVolatilityError(ArithmeticError):
    """The spot volatility of a model evaluated to (numerically) zero."""


@dataclass(frozen=True)
class DiffusionLoadings:
    """Loadings of d omega / (omega sigma) on Z (b) and on W (c)."""

    b: float
    c: float

    def __post_init__(self):
        if not (math.isfinite(self.b) and math.isfinite(self.c)):
            raise ValueError("loadings must be finite")


@dataclass(frozen=True)
class StoppingBand:
    """Band (1/n, n) for omega; leaving it stops the path."""

    n: float

    def __post_init__(self):
        if not self.n > 1:
            raise ValueError(f"band parameter n must exceed 1, got {self.n}")

    @property
    def lower(self) -> float:
        return 1.0 / self.n

    @property
    def upper(self) -> float:
        return float(self.n)

    def contains(self, omega: float) -> bool:
        return self.lower < omega < self.upper


@dataclass(frozen=True)
class IrvState:
    t: float
    s: float
    omega: float
    strike: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("s must be > 0")
        if not self.omega >= 0:
            raise ValueError("omega must be >= 0")
        if not self.strike > 0:
            raise ValueError("strike must be > 0")

    @property
    def k(self) -> float:
        return math.log(self.strike / self.s)


def no_drift_a(b, c, omega, k):
    """Drift a making the stopped call a martingale.

    a = (b^2+c^2)/16 w^2 + (b^2+c^2-2c)/4 w - [(b^2+c^2)/4 k^2 + c k + 1]
    """
    q = b * b + c * c
    return q / 16.0 * omega * omega + (q - 2.0 * c) / 4.0 * omega - (q / 4.0 * k * k + c * k + 1.0)


def carr_sun_to_master(b_cs: float, rho: float, omega: float) -> DiffusionLoadings:
    """Map the Carr-Sun diffusion ``b_cs dZ`` with d<W,Z> = rho dt to (b, c).

    Writing Z = rho W + sqrt(1-rho^2) W_perp gives c = rho b_cs / omega on W
    and b = sqrt(1-rho^2) b_cs / omega on the orthogonal motion.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {rho}")
    if omega == 0:
        raise DegenerateStateError("omega = 0: the loadings b, c are undefined")
    scale = b_cs / omega
    return DiffusionLoadings(b=math.sqrt(1.0 - rho * rho) * scale, c=rho * scale)


def cs_no_drift_a(b_cs, rho, omega, k):
    """No-drift drift of the Carr-Sun IRV model written in its own variables."""
    if np.any(np.asarray(omega) == 0):
        raise DegenerateStateError("omega = 0 in the Carr-Sun no-drift condition")
    b = b_cs
    return -(
        1.0
        + rho * b / 2.0
        - (1.0 / omega + 0.25) * b * b / 4.0
        + rho * k * b / omega
        + k * k * b * b / (4.0 * omega * omega)
    )


def band_hit(omega_path: Sequence[float], band: StoppingBand) -> int | None:
    """First index with omega <= 1/n or omega >= n, else None."""
    w = np.asarray(omega_path, dtype=float)
    if w.size == 0:
        raise ValueError("omega path is empty")
    hits = np.nonzero((w <= band.lower) | (w >= band.upper))[0]
    return int(hits[0]) if hits.size else None


# ---------------------------------------------------------------------------
# coefficient models


@dataclass
class Coefficients:
    """Vectorized model output for a batch of live states.

    ``a`` is None when the drift is to be derived from the no-drift condition.
    """

    sigma: np.ndarray
    b: np.ndarray
    c: np.ndarray
    a: np.ndarray | None = None


class CoefficientModel(ABC):
    """Model given by (sigma, b, c) and optionally an explicit drift.

    Implementations must be pure: identical inputs give identical outputs.
    ``aux`` is an opaque per-path state array advanced by :meth:`step_aux`
    (None for models without extra factors).
    """

    name: str = "model"
    maturity: float | None = None

    @abstractmethod
    def coefficients(self, t: float, s: np.ndarray, omega: np.ndarray, k: np.ndarray, aux: Any = None) -> Coefficients:
        ...

    def step_variance(self, t0: float, t1: float) -> float | None:
        """Exact integrated variance over [t0, t1] when sigma is deterministic."""
        return None

    def init_aux(self, n: int) -> Any:
        return None

    def step_aux(self, aux: Any, t: float, sig_sqrt_dt: np.ndarray, var: np.ndarray, xi_z: np.ndarray) -> Any:
        return aux

    def select_aux(self, aux: Any, idx: np.ndarray) -> Any:
        return None if aux is None else aux[idx]

    def assign_aux(self, aux: Any, idx: np.ndarray, values: Any) -> None:
        if aux is not None:
            aux[idx] = values

    def describe(self) -> dict:
        return {"name": self.name}


def _const_fn(value: float) -> Callable:
    def f(t, s, x):
        return np.full(np.shape(s), float(value))

    return f


@dataclass(frozen=True)
class BlackScholesModel(CoefficientModel):
    """b = c = 0 and deterministic sigma(t); omega decays as d omega = -sigma^2 dt.

    With ``exact_variance`` the simulator steps omega by the exact integral of
    sigma^2 over each step, so omega_T matches omega_0 - int sigma^2 to rounding.
    """

    sigma_fn: Callable[[float], float]
    exact_variance: bool = True
    maturity: float | None = None
    name: str = "black-scholes"

    def coefficients(self, t, s, omega, k, aux=None):
        n = np.shape(s)
        sig = float(self.sigma_fn(t))
        if not sig > 0:
            raise SingularVolatilityError(f"sigma({t}) = {sig} is not positive")
        zeros = np.zeros(n)
        return Coefficients(sigma=np.full(n, sig), b=zeros, c=zeros)

    def step_variance(self, t0, t1):
        if not self.exact_variance:
            return None
        val, _ = quad(lambda u: self.sigma_fn(u) ** 2, t0, t1, epsabs=0.0, epsrel=1e-13)
        return val

    def integrated_variance(self, t0: float, t1: float) -> float:
        val, _ = quad(lambda u: self.sigma_fn(u) ** 2, t0, t1, epsabs=0.0, epsrel=1e-13)
        return val

    def omega_path(self, omega0: float, times: np.ndarray) -> np.ndarray:
        """Closed-form omega_t = omega0 - int_0^t sigma^2."""
        times = np.asarray(times, dtype=float)
        out = np.empty_like(times)
        acc = 0.0
        prev = 0.0
        for i, t in enumerate(times):
            acc += self.integrated_variance(prev, t) if t > prev else 0.0
            prev = t
            out[i] = omega0 - acc
        return out

    def describe(self):
        return {"name": self.name, "exact_variance": self.exact_variance}


@dataclass(frozen=True)
class ExplicitDriftModel(CoefficientModel):
    """Constant sigma, b, c with a user-supplied drift a.

    Only useful for deliberately inconsistent dynamics: unless ``a`` equals the
    no-drift value, the call price acquires a drift.
    """

    sigma: float
    a: float
    b: float = 0.0
    c: float = 0.0
    name: str = "explicit-drift"

    def coefficients(self, t, s, omega, k, aux=None):
        n = np.shape(s)
        return Coefficients(
            sigma=np.full(n, self.sigma), b=np.full(n, self.b), c=np.full(n, self.c), a=np.full(n, self.a)
        )

    def describe(self):
        return {"name": self.name, "sigma": self.sigma, "a": self.a, "b": self.b, "c": self.c}


@dataclass(frozen=True)
class ConstantLoadingsModel(CoefficientModel):
    """Constant sigma, b, c with the drift from the no-drift condition."""

    sigma: float
    b: float = 0.0
    c: float = 0.0
    name: str = "constant-loadings"

    def coefficients(self, t, s, omega, k, aux=None):
        n = np.shape(s)
        return Coefficients(sigma=np.full(n, self.sigma), b=np.full(n, self.b), c=np.full(n, self.c))

    def describe(self):
        return {"name": self.name, "sigma": self.sigma, "b": self.b, "c": self.c}


SINGULAR_SIGMA = 1e-12


@dataclass(frozen=True)
class SwSubfamilyParams:
    """Bounded functions g1(t, s, x), w1(t, s, x) and the maturity T.

    ``x`` is the implied variance rate omega / (T - t). ``bound_g1`` and
    ``bound_w1`` are the declared sup-norm bounds; they are checked on every
    evaluation.
    """

    g1: Callable
    w1: Callable
    T: float
    bound_g1: float = math.inf
    bound_w1: float = math.inf


def w1_minus_sign_k(strike: float) -> Callable:
    """w1 = -sgn(k) with k = ln(strike / s); keeps sigma_1 positive when g1 >= 0."""

    def w1(t, s, x):
        return -np.sign(np.log(strike / np.asarray(s, dtype=float)))

    return w1


@dataclass(frozen=True)
class SwSubfamilyModel(CoefficientModel):
    """Explicit globally consistent family with b = 0 and c = v1 / sigma1.

    sigma1 = -(k/2) v1 + sqrt(X) [1 + (T - t) g1],  v1 = s / (1 + X + s^2) w1,
    X = omega / (T - t).
    """

    params: SwSubfamilyParams
    name: str = "sw-subfamily"

    @property
    def maturity(self):
        return self.params.T

    def sigma_and_v1(self, t, s, omega, k):
        p = self.params
        tau = p.T - t
        if not tau > 0:
            raise ValueError(f"evaluation at t={t} requires t < T={p.T}")
        s = np.asarray(s, dtype=float)
        x = np.asarray(omega, dtype=float) / tau
        g1 = np.asarray(p.g1(t, s, x), dtype=float)
        w1 = np.asarray(p.w1(t, s, x), dtype=float)
        if np.any(np.abs(g1) > p.bound_g1) or np.any(np.abs(w1) > p.bound_w1):
            raise ValueError("g1 or w1 exceeded its declared bound")
        v1 = s / (1.0 + x + s * s) * w1
        sig = -(np.asarray(k) / 2.0) * v1 + np.sqrt(x) * (1.0 + tau * g1)
        return sig, v1

    def coefficients(self, t, s, omega, k, aux=None):
        sig, v1 = self.sigma_and_v1(t, s, omega, k)
        if np.any(np.abs(sig) < SINGULAR_SIGMA):
            raise SingularVolatilityError("sigma_1 vanished; c = v1 / sigma_1 is singular")
        return Coefficients(sigma=sig, b=np.zeros_like(sig), c=v1 / sig)

    def describe(self):
        return {"name": self.name, "T": self.params.T}


def sw_subfamily_model(params: SwSubfamilyParams) -> SwSubfamilyModel:
    return SwSubfamilyModel(params)


def black_scholes_model(sigma_fn: Callable[[float], float], exact_variance: bool = True, maturity=None):
    return BlackScholesModel(sigma_fn, exact_variance=exact_variance, maturity=maturity)


# ---------------------------------------------------------------------------
# registry for configuration files


def _sigma_fn_from(spec: Any) -> Callable[[float], float]:
    """``0.2`` -> constant; ``[s0, s1]`` -> s0 + s1 t."""
    if isinstance(spec, (int, float)):
        v = float(spec)
        return lambda t: v
    if isinstance(spec, (list, tuple)) and len(spec) == 2:
        s0, s1 = float(spec[0]), float(spec[1])
        return lambda t: s0 + s1 * t
    raise ValueError(f"sigma must be a number or [intercept, slope], got {spec!r}")


def _build_bs(p: dict, strike: float, T: float) -> CoefficientModel:
    return BlackScholesModel(_sigma_fn_from(p.get("sigma", 0.2)), exact_variance=bool(p.get("exact_variance", True)), maturity=T)


def _build_sw(p: dict, strike: float, T: float) -> CoefficientModel:
    g1 = _const_fn(float(p.get("g1", 1.0)))
    w1_spec = p.get("w1", "minus-sign-k")
    if w1_spec == "minus-sign-k":
        w1 = w1_minus_sign_k(strike)
        bw = 1.0
    else:
        w1 = _const_fn(float(w1_spec))
        bw = abs(float(w1_spec))
    return SwSubfamilyModel(SwSubfamilyParams(g1=g1, w1=w1, T=T, bound_g1=abs(float(p.get("g1", 1.0))), bound_w1=bw))


def _build_explicit(p: dict, strike: float, T: float) -> CoefficientModel:
    return ExplicitDriftModel(sigma=float(p.get("sigma", 0.2)), a=float(p.get("a", 0.0)), b=float(p.get("b", 0.0)), c=float(p.get("c", 0.0)))


def _build_const(p: dict, strike: float, T: float) -> CoefficientModel:
    return ConstantLoadingsModel(sigma=float(p.get("sigma", 0.2)), b=float(p.get("b", 0.0)), c=float(p.get("c", 0.0)))


@dataclass(frozen=True)
class ModelEntry:
    builder: Callable[[dict, float, float], CoefficientModel]
    params: frozenset = field(default_factory=frozenset)


MODEL_REGISTRY: dict[str, ModelEntry] = {
    "black-scholes": ModelEntry(_build_bs, frozenset({"sigma", "exact_variance"})),
    "sw-subfamily": ModelEntry(_build_sw, frozenset({"g1", "w1"})),
    "explicit-drift": ModelEntry(_build_explicit, frozenset({"sigma", "a", "b", "c"})),
    "constant-loadings": ModelEntry(_build_const, frozenset({"sigma", "b", "c"})),
}


def build_model(name: str, params: dict, strike: float, T: float) -> CoefficientModel:
    """Build a registered model from its name and parameter table."""
    if name not in MODEL_REGISTRY:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}")
    entry = MODEL_REGISTRY[name]
    unknown = set(params) - entry.params
    if unknown:
        raise KeyError(f"unknown parameters for model {name!r}: {sorted(unknown)}")
    return entry.builder(params, strike, T)
