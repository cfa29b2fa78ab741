"""Closed-form thresholds, Whittle indices and the Lagrangian lower bound.

All quantities are for a single content with request probability ``p``
(request rate ``p * beta``) and update rate ``lam``, at holding cost ``C_h``
per unit of time spent in the cache.

Notation used in names:

* ``tau_zero``  -- c_f / (c_a lam): age at which serving stale costs as much as a fetch
* ``tau_star``  -- refresh threshold when holding is free
* ``tau_bar``   -- keep/discard threshold for an idle cached copy
* ``tau_tilde`` -- discard/refetch threshold for a requested cached copy
* ``index_cap`` -- Whittle index of a freshly fetched, uncached content
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
import numpy as np
from scipy.special import lambertw

from .model import Catalog, ContentParams, CostModel, ObservedState
from .roots import golden_max, safeguarded_newton

# below this gap the expm1 form of x + e^-x - 1 loses digits; use the series
_SERIES_CUTOFF = 1e-3


class Regime(str, Enum):
    ZERO = "zero"
    INTERIOR = "interior"
    ABOVE_CAP = "above_cap"


@dataclass(frozen=True)
class ThresholdSet:
    tau_bar: float
    tau_tilde: float
    tau_star: float
    tau_zero: float
    index_cap: float
    holding_cost: float

    @property
    def regime(self) -> Regime:
        return regime_of(self.holding_cost, self.index_cap)


@dataclass(frozen=True)
class RelaxedValue:
    theta: float
    regime: Regime


@dataclass(frozen=True)
class DualResult:
    ch_opt: float
    lower_bound: float
    per_content_theta: list[float] = field(default_factory=list, repr=False)


def regime_of(holding_cost: float, index_cap: float) -> Regime:
    if holding_cost >= index_cap:
        return Regime.ABOVE_CAP
    if holding_cost == 0:
        return Regime.ZERO
    return Regime.INTERIOR


def _lam_of(content_or_lam: ContentParams | float) -> float:
    if isinstance(content_or_lam, ContentParams):
        return content_or_lam.lam
    return float(content_or_lam)


def _check_p(p: float) -> None:
    if not 0 < p <= 1:
        raise ValueError(f"request probability must lie in (0, 1], got {p}")


def tau_zero(cost: CostModel, content: ContentParams | float) -> float:
    lam = _lam_of(content)
    if lam < 0:
        raise ValueError("update rate must be >= 0")
    if lam == 0:
        return math.inf
    return cost.c_f / (cost.c_a * lam)


def tau_star(p: float, cost: CostModel, lam: float) -> float:
    """Positive root of ``p beta c_a lam t^2 + 2 c_a lam t - 2 c_f = 0``."""
    _check_p(p)
    t0 = tau_zero(cost, lam)
    if math.isinf(t0):
        return math.inf
    # rationalised form of -1/(p beta) + sqrt(1/(p beta)^2 + 2 t0/(p beta))
    return 2.0 * t0 / (1.0 + math.sqrt(1.0 + 2.0 * p * cost.beta * t0))


def tau_star_residual(tau: float, p: float, cost: CostModel, lam: float) -> float:
    """Relative residual of the refresh-threshold quadratic."""
    q = 2 * cost.c_a * lam * tau + p * cost.beta * cost.c_a * lam * tau**2 - 2 * cost.c_f
    return abs(q) / (2 * cost.c_f)


def index_cap(p: float, cost: CostModel, lam: float) -> float:
    _check_p(p)
    full = p * cost.beta * cost.c_f
    if lam == 0:
        return full
    t0 = tau_zero(cost, lam)
    return full + p * cost.c_a * lam * math.expm1(-cost.beta * t0)


# -- gap equation: x + e^-x = 1 + C_h / (p c_a lam) ---------------------------


def excess(x):
    """``x + exp(-x) - 1`` evaluated without cancellation (scalar or array)."""
    x = np.asarray(x, dtype=float)
    small = x < _SERIES_CUTOFF
    xs = np.where(small, x, 0.0)
    series = xs**2 * (0.5 - xs * (1 / 6 - xs * (1 / 24 - xs * (1 / 120 - xs / 720))))
    direct = x + np.expm1(-np.where(small, 0.0, x))
    out = np.where(small, series, direct)
    return out if out.ndim else float(out)


def solve_gap_vec(rhs: np.ndarray, *, maxiter: int = 100) -> np.ndarray:
    """Vectorised root of ``excess(x) = rhs`` on x >= 0.

    Newton iterations inside the bracket [sqrt(2 rhs), rhs + 1], which
    always contains the root because x^2/2 - x^3/6 <= excess(x) <= x^2/2 and
    excess(x) >= x - 1.
    """
    r = np.asarray(rhs, dtype=float)
    if np.any(r < 0):
        raise ValueError("gap equation needs a non-negative right-hand side")
    lo = np.sqrt(2.0 * r)
    hi = r + 1.0
    x = np.where(r < 1.0, lo, r + 1.0 - np.exp(-(r + 1.0)))
    x = np.clip(x, lo, hi)
    for _ in range(maxiter):
        fx = excess(x) - r
        lo = np.where(fx < 0, x, lo)
        hi = np.where(fx > 0, x, hi)
        d = -np.expm1(-x)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = np.where(d > 0, x - fx / d, 0.5 * (lo + hi))
        escaped = ~((x_new >= lo) & (x_new <= hi))
        x_new = np.where(escaped, 0.5 * (lo + hi), x_new)
        x_new = np.where(fx == 0, x, x_new)
        done = np.abs(x_new - x) <= 2e-16 * np.maximum(1.0, x)
        x = x_new
        if np.all(done):
            break
    return np.where(r == 0, 0.0, x)


def solve_gap(holding_cost: float, p: float, c_a: float, lam: float) -> float:
    """Dimensionless gap ``beta (tau_tilde - tau_bar)`` at holding cost ``holding_cost``."""
    if holding_cost < 0:
        raise ValueError("holding cost must be >= 0")
    _check_p(p)
    if holding_cost == 0:
        return 0.0
    if lam == 0:
        return math.inf
    r = holding_cost / (p * c_a * lam)
    return float(solve_gap_vec(np.array([r]))[0])


# -- thresholds ---------------------------------------------------------------


def _tau_bar_from_gap(g, holding_cost, p, beta, t0):
    # A = g/beta - C_h/(c_a lam p beta) + 1/(p beta) simplifies to
    # (1 - e^-g)/beta + 1/(p beta) through the gap equation.
    a = -np.expm1(-g) / beta + 1.0 / (p * beta)
    b = 2.0 * (t0 - g / beta) / (p * beta)
    # stable form of -a + sqrt(a^2 + b); a > 0 always
    tb = b / (a + np.sqrt(np.maximum(a * a + b, 0.0)))
    return np.maximum(tb, 0.0)


def thresholds(holding_cost: float, p: float, cost: CostModel, lam: float) -> ThresholdSet:
    if holding_cost < 0:
        raise ValueError("holding cost must be >= 0")
    _check_p(p)
    t0 = tau_zero(cost, lam)
    ts = tau_star(p, cost, lam)
    cap = index_cap(p, cost, lam)
    if holding_cost >= cap:
        return ThresholdSet(0.0, t0, ts, t0, cap, holding_cost)
    if lam == 0:
        # a static copy never goes stale: keep it whenever holding is cheaper than refetching
        return ThresholdSet(math.inf, math.inf, ts, t0, cap, holding_cost)
    if holding_cost == 0:
        return ThresholdSet(ts, ts, ts, t0, cap, holding_cost)
    g = solve_gap(holding_cost, p, cost.c_a, lam)
    tb = float(_tau_bar_from_gap(g, holding_cost, p, cost.beta, t0))
    tt = min(tb + g / cost.beta, t0)
    return ThresholdSet(tb, tt, ts, t0, cap, holding_cost)


def threshold_residuals(ts: ThresholdSet, p: float, cost: CostModel, lam: float) -> tuple[float, float]:
    """Absolute residuals of the two equations defining ``(tau_bar, tau_tilde)``."""
    tb, tt, ch = ts.tau_bar, ts.tau_tilde, ts.holding_cost
    ca, beta = cost.c_a, cost.beta
    r1 = ca * lam * p * beta * (tt * tb - tb * tb / 2) - ch * tb + ca * lam * tt - cost.c_f
    r2 = excess(beta * (tt - tb)) - ch / (p * ca * lam)
    return abs(r1), abs(r2)


# -- Whittle index --------------------------------------------------------------


def _idle_index_gap(tau: float, p: float, cost: CostModel, lam: float) -> float:
    """Index of an idle cached copy with tau < tau_star.

    Setting tau_bar = tau and eliminating C_h with the gap equation leaves
    x/beta + p tau (1 - e^-x) + tau + p beta tau^2 / 2 - tau_zero = 0,
    strictly increasing and concave in x; its root gives
    C_h = p c_a lam (x + e^-x - 1).
    """
    beta = cost.beta
    t0 = tau_zero(cost, lam)
    base = tau + p * beta * tau * tau / 2 - t0
    if base >= 0:
        return 0.0

    def f(x):
        return x / beta - p * tau * math.expm1(-x) + base

    def df(x):
        return 1 / beta + p * tau * math.exp(-x)

    hi = -beta * base
    x = safeguarded_newton(f, df, 0.0, hi, x0=min(hi, -beta * base / (1 + p * beta * tau)))
    return p * cost.c_a * lam * excess(x)


def _idle_index_bisect(tau: float, p: float, cost: CostModel, lam: float, *, maxiter: int = 200) -> float:
    """Same index by bisection on C_h, using that tau_bar(C_h) decreases."""
    cap = index_cap(p, cost, lam)
    tol = 1e-9 * max(1.0, tau)
    lo, hi = 0.0, cap
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        tb = thresholds(mid, p, cost, lam).tau_bar
        if abs(tb - tau) < tol and hi - lo < 1e-12 * cap:
            return mid
        if tb > tau:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def whittle_index(state: ObservedState, p: float, cost: CostModel, lam: float, *, method: str = "gap") -> float:
    _check_p(p)
    if method not in ("gap", "bisect"):
        raise ValueError(f"unknown method {method!r}")
    if state.cached and state.requested:
        raise ValueError("no index is needed for a requested cached content")
    if not state.cached and not state.requested:
        raise ValueError("no index is defined for an absent content")
    cap = index_cap(p, cost, lam)
    if not state.cached:
        return cap
    if lam == 0:
        return cap
    if state.tau >= tau_star(p, cost, lam):
        return 0.0
    if method == "gap":
        return _idle_index_gap(state.tau, p, cost, lam)
    return _idle_index_bisect(state.tau, p, cost, lam)


def idle_indices(tau: np.ndarray, p: np.ndarray, lam: np.ndarray, cost: CostModel) -> np.ndarray:
    """Vectorised index of idle cached copies (the simulator's eviction path).

    With a = beta p tau and b = beta (tau_zero - tau - p beta tau^2 / 2) the
    reduced equation reads x + a (1 - e^-x) = b, whose root is
    x = b - a + W0(a e^(a - b)) on the principal Lambert-W branch.
    """
    tau = np.asarray(tau, dtype=float)
    p = np.asarray(p, dtype=float)
    lam = np.asarray(lam, dtype=float)
    beta = cost.beta
    static = lam == 0
    lam_s = np.where(static, 1.0, lam)
    t0 = cost.c_f / (cost.c_a * lam_s)
    a = beta * p * tau
    b = beta * (t0 - tau - p * beta * tau * tau / 2)
    live = (b > 0) & ~static
    expo = np.where(live, a - b, 0.0)
    safe = expo < 700.0
    z = a * np.exp(np.where(safe, expo, 0.0))
    x = np.where(safe, b - a + lambertw(z).real, 0.0)
    if not np.all(safe | ~live):
        # e^(a-b) would overflow; fall back to Newton in those slots
        slow = live & ~safe
        x[slow] = _reduced_root_newton(a[slow], b[slow])
    x = np.maximum(x, 0.0)
    w = p * cost.c_a * lam_s * excess(x)
    cap = p * beta * cost.c_f
    return np.where(static, cap, np.where(live, w, 0.0))


def _reduced_root_newton(a: np.ndarray, b: np.ndarray, maxiter: int = 100) -> np.ndarray:
    # f(x) = x + a (1 - e^-x) - b is concave increasing with f(0) < 0 < f(b)
    x = b / (1 + a)
    lo = np.zeros_like(b)
    hi = b.copy()
    for _ in range(maxiter):
        fx = x - a * np.expm1(-x) - b
        lo = np.where(fx < 0, x, lo)
        hi = np.where(fx > 0, x, hi)
        x_new = x - fx / (1 + a * np.exp(-x))
        x_new = np.where((x_new >= lo) & (x_new <= hi), x_new, 0.5 * (lo + hi))
        if np.all(np.abs(x_new - x) <= 4e-16 * np.maximum(1.0, x)):
            return x_new
        x = x_new
    return x


def index_caps(p: np.ndarray, lam: np.ndarray, cost: CostModel) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    lam = np.asarray(lam, dtype=float)
    live = lam > 0
    lam_s = np.where(live, lam, 1.0)
    ageing = p * cost.c_a * lam_s * np.expm1(-cost.beta * cost.c_f / (cost.c_a * lam_s))
    return p * cost.beta * cost.c_f + np.where(live, ageing, 0.0)


# -- relaxed single-content value and the dual bound ---------------------------


def relaxed_value(holding_cost: float, p: float, cost: CostModel, lam: float) -> RelaxedValue:
    if holding_cost < 0:
        raise ValueError("holding cost must be >= 0")
    ts = thresholds(holding_cost, p, cost, lam)
    regime = ts.regime
    scale = p * cost.beta * cost.c_a * lam
    if regime is Regime.ABOVE_CAP:
        theta = p * cost.beta * cost.c_f
    elif lam == 0:
        # limits of the closed form as lam -> 0
        theta = 0.0 if regime is Regime.ZERO else holding_cost
    elif regime is Regime.ZERO:
        theta = scale * ts.tau_star
    else:
        theta = scale * ts.tau_tilde
    return RelaxedValue(theta, regime)


def relaxed_values(holding_cost, p: np.ndarray, lam: np.ndarray, cost: CostModel) -> np.ndarray:
    """Vectorised ``relaxed_value(...).theta``; ``holding_cost`` broadcasts against the contents."""
    ch = np.asarray(holding_cost, dtype=float)
    p = np.asarray(p, dtype=float)
    lam = np.asarray(lam, dtype=float)
    beta, ca, cf = cost.beta, cost.c_a, cost.c_f
    cap = index_caps(p, lam, cost)
    full = p * beta * cf
    static = lam == 0
    lam_s = np.where(static, 1.0, lam)
    t0 = cf / (ca * lam_s)
    ts = 2.0 * t0 / (1.0 + np.sqrt(1.0 + 2.0 * p * beta * t0))
    g = solve_gap_vec(ch / (p * ca * lam_s))
    tb = _tau_bar_from_gap(g, ch, p, beta, t0)
    tt = np.where(ch == 0, ts, np.minimum(tb + g / beta, t0))
    theta = np.where(static, ch, p * beta * ca * lam_s * tt)
    return np.where(ch >= cap, full, theta)


def dual_function(holding_cost: float, catalog: Catalog, cost: CostModel) -> float:
    theta = relaxed_values(holding_cost, catalog.popularity, catalog.lambdas, cost)
    return math.fsum(theta) - holding_cost * catalog.cache_capacity


def dual_lower_bound(catalog: Catalog, cost: CostModel, *, grid_points: int = 2001, rtol_tie: float = 1e-12) -> DualResult:
    """Maximise the Lagrangian dual over C_h by grid scan plus golden-section refinement."""
    if grid_points < 3:
        raise ValueError("need at least 3 grid points")
    p, lam = catalog.popularity, catalog.lambdas
    ch_max = float(np.max(index_caps(p, lam, cost)))
    grid = np.linspace(0.0, ch_max, grid_points)
    values = np.array([dual_function(c, catalog, cost) for c in grid])
    best = float(values.max())
    # leftmost near-maximum, so flat or rounding-noisy plateaus resolve to the smaller C_h
    k = int(np.flatnonzero(values >= best - rtol_tie * max(1.0, abs(best)))[0])
    ch_opt, v_opt = float(grid[k]), float(values[k])
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, grid_points - 1)]
    x, fx = golden_max(lambda c: dual_function(c, catalog, cost), float(a), float(b))
    if fx > v_opt + rtol_tie * max(1.0, abs(v_opt)):
        ch_opt, v_opt = x, fx
    theta = relaxed_values(ch_opt, p, lam, cost)
    return DualResult(ch_opt, v_opt, [float(t) for t in theta])
