"""Static-arbitrage conditions on a single-maturity strike grid.

For spot S, strikes K_1 < ... < K_N and calls C_i the grid is free of static
arbitrage when

1. (S - K_i)+ < C_i < S
2. -1 < slope_i < 0,          slope_i = (C_{i+1} - C_i) / (K_{i+1} - K_i)
3. slope_i <= slope_{i+1}
4. -1 < (C_1 - S) / K_1 <= slope_1

Indices in reports are 1-based. :func:`brute_force_oracle` searches
buy-and-hold portfolios directly and serves as an independent check.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog

CONDITIONS = ("bounds", "slope", "convexity", "first-slope")


class StructuralError(ValueError):
    """Malformed snapshot: unsorted or non-positive strikes, bad prices, ..."""


@dataclass(frozen=True)
class SmileSnapshot:
    s: float
    strikes: tuple
    calls: tuple

    def __post_init__(self):
        strikes = np.asarray(self.strikes, dtype=float)
        calls = np.asarray(self.calls, dtype=float)
        if not (math.isfinite(self.s) and self.s > 0):
            raise StructuralError(f"underlying price must be finite and > 0, got {self.s}")
        if strikes.ndim != 1 or strikes.size == 0:
            raise StructuralError("need at least one strike")
        if calls.shape != strikes.shape:
            raise StructuralError(f"{strikes.size} strikes but {calls.size} call prices")
        if np.any(~np.isfinite(strikes)) or np.any(strikes <= 0):
            raise StructuralError("strikes must be finite and > 0")
        if np.any(np.diff(strikes) <= 0):
            raise StructuralError("strikes must be strictly increasing")
        if np.any(~np.isfinite(calls)) or np.any(calls < 0):
            raise StructuralError("call prices must be finite and >= 0")
        object.__setattr__(self, "strikes", tuple(float(x) for x in strikes))
        object.__setattr__(self, "calls", tuple(float(x) for x in calls))

    @property
    def n(self) -> int:
        return len(self.strikes)


@dataclass(frozen=True)
class Violation:
    condition: str
    index: int
    margin: float  # signed; the condition requires margin > 0 (strict) or >= 0
    detail: str = ""

    @property
    def magnitude(self) -> float:
        return abs(self.margin)


@dataclass(frozen=True)
class ViolationReport:
    entries: tuple = ()

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def clean(self) -> bool:
        return not self.entries

    def conditions(self) -> set:
        return {e.condition for e in self.entries}

    def to_list(self) -> list:
        return [dict(asdict(e), magnitude=e.magnitude) for e in self.entries]


def _margins(s, strikes, calls):
    """Margins for all conditions, batched over leading axes of ``calls``.

    Returns a list of (condition, detail, margins, strict) with margins shaped
    (..., count) where the last axis enumerates indices starting at 1.
    """
    s = np.asarray(s, dtype=float)[..., None]
    K = np.asarray(strikes, dtype=float)
    C = np.asarray(calls, dtype=float)
    out = [
        ("bounds", "lower", C - np.maximum(s - K, 0.0), True),
        ("bounds", "upper", s - C, True),
    ]
    if K.size >= 2:
        slope = np.diff(C, axis=-1) / np.diff(K)
        first = (C[..., :1] - s) / K[0]
        out += [
            ("slope", "lower", slope + 1.0, True),
            ("slope", "upper", -slope, True),
            ("first-slope", "lower", first + 1.0, True),
            ("first-slope", "upper", slope[..., :1] - first, False),
        ]
        if K.size >= 3:
            out.append(("convexity", "", np.diff(slope, axis=-1), False))
    return out


def _fails(margin, strict: bool, tol: float):
    return margin <= -tol if strict else margin < -tol


def check(snapshot: SmileSnapshot, tol: float = 0.0) -> ViolationReport:
    """Evaluate all four conditions; strict ones fail at margin <= -tol."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    entries = []
    for cond, detail, m, strict in _margins(snapshot.s, snapshot.strikes, snapshot.calls):
        for j in np.nonzero(_fails(m, strict, tol))[0]:
            entries.append(Violation(cond, int(j) + 1, float(m[j]), detail))
    order = {c: i for i, c in enumerate(CONDITIONS)}
    entries.sort(key=lambda e: (order[e.condition], e.index, e.detail))
    return ViolationReport(tuple(entries))


def violation_counts(s, strikes, calls, tol: float = 0.0) -> np.ndarray:
    """Number of violations per snapshot for a batch sharing one strike grid."""
    calls = np.asarray(calls, dtype=float)
    total = np.zeros(calls.shape[:-1], dtype=np.int64)
    for _, _, m, strict in _margins(s, strikes, calls):
        total += _fails(m, strict, tol).sum(axis=-1)
    return total


# ---------------------------------------------------------------------------
# brute-force portfolio oracle


@dataclass(frozen=True)
class OracleBudget:
    grid_points: int = 2001
    weight_bound: float = 10.0
    strict_tol: float = 1e-10  # relative to s: certified cost must be below -strict_tol * s
    payoff_tol: float = 1e-9  # relative to s: somewhere-positive payoff threshold
    zero_tol: float = 1e-12  # LP objective below this (relative) means no weak arbitrage


@dataclass(frozen=True)
class Portfolio:
    label: str
    stock: float
    cash: float
    calls: tuple
    cost: float
    min_payoff: float
    max_payoff: float


@dataclass(frozen=True)
class OracleResult:
    status: str  # "arbitrage", "absent" or "inconclusive"
    certificate: Portfolio | None = None
    note: str = ""
    budget: OracleBudget = field(default_factory=OracleBudget)

    @property
    def found(self) -> bool:
        return self.status == "arbitrage"


def _kinks(snapshot: SmileSnapshot, budget: OracleBudget) -> np.ndarray:
    K = np.asarray(snapshot.strikes)
    top = 3.0 * max(K[-1], snapshot.s)
    return np.unique(np.concatenate([[0.0], K, [top]]))


def _evaluate(label, x, snapshot, budget) -> Portfolio:
    K = np.asarray(snapshot.strikes)
    C = np.asarray(snapshot.calls)
    pts = _kinks(snapshot, budget)
    pay = x[0] * pts + x[1] + np.maximum(pts[:, None] - K[None, :], 0.0) @ x[2:]
    tail = x[0] + x[2:].sum()
    cost = x[0] * snapshot.s + x[1] + C @ x[2:]
    min_pay = float(pay.min()) if tail >= 0 else -math.inf
    max_pay = float(pay.max()) if tail <= 0 else math.inf
    return Portfolio(label, float(x[0]), float(x[1]), tuple(map(float, x[2:])), float(cost), min_pay, max_pay)


def _named_candidates(snapshot: SmileSnapshot):
    """Textbook strategies: covered calls, verticals, butterflies, bounds."""
    n = snapshot.n
    K = snapshot.strikes

    def vec(stock=0.0, cash=0.0, **legs):
        x = np.zeros(n + 2)
        x[0], x[1] = stock, cash
        for i, w in legs.items():
            x[2 + int(i[1:])] = w
        return x

    for i in range(n):
        yield f"long stock, short call {i + 1}", vec(stock=1.0, **{f"c{i}": -1.0})
        yield f"long call {i + 1}, short stock, cash", vec(stock=-1.0, cash=K[i], **{f"c{i}": 1.0})
        yield f"long call {i + 1}", vec(**{f"c{i}": 1.0})
    # stock is the call struck at 0 for the remaining spreads
    strikes = [0.0] + list(K)
    for j in range(len(strikes) - 1):
        for l in range(j + 1, len(strikes)):
            lo, hi = strikes[j], strikes[l]
            a = vec(stock=1.0) if j == 0 else vec(**{f"c{j - 1}": 1.0})
            b = vec(**{f"c{l - 1}": 1.0})
            yield f"bull spread {lo:g}/{hi:g}", a - b
            yield f"bear spread {lo:g}/{hi:g} with cash", b - a + vec(cash=hi - lo)
    for j in range(len(strikes) - 2):
        for m in range(j + 1, len(strikes) - 1):
            for l in range(m + 1, len(strikes)):
                k1, k2, k3 = strikes[j], strikes[m], strikes[l]
                lam = (k3 - k2) / (k3 - k1)
                leg1 = vec(stock=1.0) if j == 0 else vec(**{f"c{j - 1}": 1.0})
                x = lam * leg1 + (1 - lam) * vec(**{f"c{l - 1}": 1.0}) - vec(**{f"c{m - 1}": 1.0})
                yield f"butterfly {k1:g}/{k2:g}/{k3:g}", x


def _is_certificate(p: Portfolio, scale: float, budget: OracleBudget) -> bool:
    if p.min_payoff < 0:
        return False
    if p.cost < -budget.strict_tol * scale:
        return True
    return p.cost <= 0 and p.max_payoff > budget.payoff_tol * scale


def _repair(x: np.ndarray, snapshot: SmileSnapshot, budget: OracleBudget) -> np.ndarray:
    """Lift an LP solution so that its payoff is exactly nonnegative."""
    x = x.copy()
    tail = x[0] + x[2:].sum()
    if tail < 0:
        x[0] -= tail
    p = _evaluate("", x, snapshot, budget)
    if p.min_payoff < 0:
        x[1] -= p.min_payoff
    return x


def brute_force_oracle(snapshot: SmileSnapshot, budget: OracleBudget | None = None) -> OracleResult:
    """Search for a static arbitrage; returns a certificate, absence or inconclusive."""
    budget = budget or OracleBudget()
    if snapshot.n > 8:
        raise ValueError("the oracle is meant for at most 8 strikes")
    scale = snapshot.s
    for label, x in _named_candidates(snapshot):
        p = _evaluate(label, x, snapshot, budget)
        if _is_certificate(p, scale, budget):
            return OracleResult("arbitrage", p, "named strategy", budget)

    K = np.asarray(snapshot.strikes)
    C = np.asarray(snapshot.calls)
    n = snapshot.n
    top = 3.0 * max(K[-1], snapshot.s)
    grid = np.unique(np.concatenate([np.linspace(0.0, top, budget.grid_points), K]))
    rows = np.column_stack([grid, np.ones_like(grid), np.maximum(grid[:, None] - K[None, :], 0.0)])
    tail = np.concatenate([[1.0, 0.0], np.ones(n)])
    A_ub = -np.vstack([rows, tail])
    b_ub = np.zeros(A_ub.shape[0])
    cost = np.concatenate([[snapshot.s, 1.0], C])
    bounds = [(-budget.weight_bound, budget.weight_bound)] * (n + 2)
    opts = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}

    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs", options=opts)
    if res.status != 0:
        return OracleResult("inconclusive", None, f"cost LP failed: {res.message}", budget)
    p = _evaluate("linear program: minimum cost", _repair(res.x, snapshot, budget), snapshot, budget)
    if _is_certificate(p, scale, budget):
        return OracleResult("arbitrage", p, "cost LP", budget)
    if res.fun < -budget.strict_tol * scale:
        return OracleResult("inconclusive", None, "negative LP cost could not be certified", budget)

    # zero-cost portfolios with a somewhere-positive payoff
    obj = -rows.sum(axis=0) / (grid.size * scale)
    A2, b2 = np.vstack([A_ub, cost]), np.append(b_ub, 0.0)
    res2 = linprog(obj, A_ub=A2, b_ub=b2, bounds=bounds, method="highs", options=opts)
    if res2.status != 0:
        # tight tolerances occasionally stall HiGHS; retry with its defaults
        res2 = linprog(obj, A_ub=A2, b_ub=b2, bounds=bounds, method="highs")
    if res2.status != 0:
        return OracleResult("inconclusive", None, f"payoff LP failed: {res2.message}", budget)
    p2 = _evaluate("linear program: free payoff", _repair(res2.x, snapshot, budget), snapshot, budget)
    if _is_certificate(p2, scale, budget):
        return OracleResult("arbitrage", p2, "payoff LP", budget)
    if -res2.fun <= budget.zero_tol:
        return OracleResult("absent", None, "", budget)
    return OracleResult("inconclusive", None, f"payoff LP objective {-res2.fun:.3g} not certified", budget)
