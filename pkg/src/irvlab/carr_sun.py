"""Audit of the Carr-Sun implied-remaining-variance model.

The model prescribes d omega = a(omega) sigma^2 dt + b(omega) sigma dZ with
a(omega) = -a1 omega + a0 - 1 and d<W, Z> = rho dt. Its no-drift condition
pins a smile omega(k). Applying Ito to that smile produces a W-loading only,
whereas the correlated driver also carries a component orthogonal to W. The
audit below evaluates both sides in closed form, per sigma^2 for drifts and
per sigma for loadings, and reports the mismatch.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class CarrSunParameterError(ValueError):
    pass


@dataclass(frozen=True)
class CarrSunParams:
    a0: float
    a1: float
    rho: float

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise CarrSunParameterError(f"rho must lie in [-1, 1], got {self.rho}")
        if not self.a0 > self.rho**2:
            raise CarrSunParameterError(f"a0 > rho^2 violated: a0={self.a0}, rho^2={self.rho ** 2}")
        if not 1.0 - 2.0 * self.rho + 4.0 * self.a1 >= 0:
            raise CarrSunParameterError(
                f"1 - 2 rho + 4 a1 >= 0 violated: value {1.0 - 2.0 * self.rho + 4.0 * self.a1}"
            )

    @property
    def m(self) -> float:
        """The recurring combination 1 - 2 rho + 4 a1."""
        return 1.0 - 2.0 * self.rho + 4.0 * self.a1


def cs_drift_fn(omega, p: CarrSunParams):
    return -p.a1 * omega + p.a0 - 1.0


def cs_diffusion_fn(omega):
    """The model's diffusion b(omega) = omega."""
    return omega


def discriminant(k, p: CarrSunParams):
    return k * k + 4.0 * p.rho * k + 4.0 * p.a0 + p.m**2


def cs_smile(k, p: CarrSunParams):
    """The unique positive root omega(k) of the no-drift quadratic."""
    D = discriminant(k, p)
    return 2.0 * (2.0 * p.rho - 1.0 - 4.0 * p.a1 + np.sqrt(D))


def quadratic_residual(omega, k, p: CarrSunParams):
    """omega^2 + 4 m omega - 4 (4 a0 + 4 rho k + k^2); zero on the smile."""
    return omega * omega + 4.0 * p.m * omega - 4.0 * (4.0 * p.a0 + 4.0 * p.rho * k + k * k)


@dataclass(frozen=True)
class CsAuditReport:
    k: float
    smile_omega: float
    ito_drift: float
    ito_w_loading: float
    model_drift: float
    orthogonal_mismatch: float
    residual_quartic_term: float
    branch: str  # "independent", "correlated" or "perfect"

    def to_dict(self) -> dict:
        return asdict(self)


def cs_ito_audit(k: float, p: CarrSunParams) -> CsAuditReport:
    """Ito coefficients of the smile against what the model can produce.

    With k = ln K - ln S and dS / S = sigma dW, omega(k) = 2(2 rho - 1 - 4 a1 + sqrt(D))
    has, per sigma^2, the drift (1/sqrt D)[1 + 2 rho + k - (2 rho + k)^2 / D]
    and, per sigma, the W-loading -2 (2 rho + k) / sqrt D.

    In the model, d omega's martingale part is b(omega) sigma dZ with
    Z = rho W + sqrt(1 - rho^2) W_perp. Matching the W-part forces
    b(omega) rho = W-loading; the W_perp loading the model must then carry,
    |W-loading| sqrt(1 - rho^2) / |rho|, is absent from the smile's dynamics.
    """
    D = discriminant(k, p)
    sd = math.sqrt(D)
    x = 2.0 * p.rho + k
    omega = 2.0 * (2.0 * p.rho - 1.0 - 4.0 * p.a1 + sd)
    drift = (1.0 + 2.0 * p.rho + k - x * x / D) / sd
    w_load = -2.0 * x / sd
    quartic = 0.0
    if p.rho == 0.0:
        branch = "independent"
        mismatch = abs(w_load)
    elif abs(p.rho) == 1.0:
        branch = "perfect"
        mismatch = 0.0
        quartic = 1.0 / (4.0 * sd)
    else:
        branch = "correlated"
        mismatch = abs(2.0 * x / sd) * (math.sqrt(1.0 - p.rho * p.rho) / abs(p.rho))
    return CsAuditReport(
        k=float(k),
        smile_omega=float(omega),
        ito_drift=float(drift),
        ito_w_loading=float(w_load),
        model_drift=float(cs_drift_fn(omega, p)),
        orthogonal_mismatch=float(mismatch),
        residual_quartic_term=float(quartic),
        branch=branch,
    )


@dataclass(frozen=True)
class CsVerdict:
    consistent: bool
    witness_k: float | None
    max_mismatch: float
    reports: tuple

    def line(self) -> str:
        if self.consistent:
            return "consistent: no mismatch on the grid"
        return f"inconsistent: witness k={self.witness_k!r} (mismatch {self.max_mismatch:.6g})"


def audit_grid(ks, p: CarrSunParams, threshold: float = 1e-6) -> CsVerdict:
    """Audit every k; the worst offender is the witness."""
    reports = tuple(cs_ito_audit(float(k), p) for k in ks)
    score = [max(r.orthogonal_mismatch, r.residual_quartic_term) for r in reports]
    j = int(np.argmax(score)) if score else 0
    worst = score[j] if score else 0.0
    if worst > threshold:
        return CsVerdict(False, reports[j].k, worst, reports)
    return CsVerdict(True, None, worst, reports)
