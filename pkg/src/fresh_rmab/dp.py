"""Relative value iteration on a discretised single-content semi-MDP.

This is an independent check of the closed forms in :mod:`fresh_rmab.index`:
nothing here calls into that module. States are ``(tau_i, 1, 1)`` and
``(tau_i, 1, 0)`` on a uniform grid plus the two uncached states ``(0, 1)``
and ``(0, 0)``. Decision epochs are request epochs, so every transition has
mean sojourn ``1/beta`` and the problem reduces to an ordinary average-cost
MDP with per-epoch costs; the average cost rate is ``beta`` times the gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.signal import lfilter

from .model import Action, CostModel

Scheme = Literal["linear", "cell"]

# tie preference: the active (keep) action wins at exact boundaries
_PREFERENCE = (Action.SERVE_KEEP, Action.FETCH_CACHE, Action.DISCARD, Action.FETCH_DISCARD)


class StructureError(AssertionError):
    """The greedy policy does not have the expected threshold shape."""


class RVIDidNotConverge(RuntimeError):
    def __init__(self, iterations: int, span: float):
        super().__init__(f"relative value iteration stopped after {iterations} sweeps with span {span:.3e}")
        self.iterations = iterations
        self.span = span


@dataclass(frozen=True)
class GridConfig:
    step: float | None = None
    tau_max: float | None = None
    scheme: Scheme = "linear"
    points_per_tau_zero: int = 2000


@dataclass(frozen=True)
class DiscreteModel:
    tau_grid: np.ndarray
    p: float
    cost: CostModel
    lam: float
    holding_cost: float
    scheme: Scheme
    # offset weights: w_0 = first, w_j = ratio_coef * decay**j for j >= 1
    first: float
    ratio_coef: float
    decay: float
    reference_index: int = 0

    @property
    def step(self) -> float:
        return float(self.tau_grid[1] - self.tau_grid[0])

    @property
    def size(self) -> int:
        return len(self.tau_grid)

    def offset_weights(self, n: int) -> np.ndarray:
        """Weights of jump offsets 0..n-1, without tail lumping."""
        j = np.arange(n)
        w = self.ratio_coef * self.decay**j
        w[0] = self.first
        return w

    def kernel_row(self, i: int) -> np.ndarray:
        """Transition weights from grid index ``i`` to every grid index, tail lumped on the last point."""
        k = self.size
        row = np.zeros(k)
        span = k - i
        w = self.offset_weights(span)
        row[i:] = w
        row[-1] += 1.0 - math.fsum(w)
        return row

    def kernel_matrix(self) -> np.ndarray:
        return np.vstack([self.kernel_row(i) for i in range(self.size)])

    def expect(self, u: np.ndarray) -> np.ndarray:
        """``sum_j w_j u[min(i + j, K)]`` for every i, in O(K)."""
        q = self.decay
        tail = u[-1] / (1.0 - q)
        # T_i = u_i + q T_{i+1}, run backwards as a first-order IIR filter
        t = lfilter([1.0], [1.0, -q], u[::-1], zi=[q * tail])[0][::-1]
        return self.first * u + self.ratio_coef * (t - u)


@dataclass
class ValueTable:
    model: DiscreteModel
    v_requested: np.ndarray
    v_idle: np.ndarray
    v_missed: float
    v_absent: float
    theta_hat: float
    theta_gain: float
    greedy_requested: np.ndarray
    greedy_idle: np.ndarray
    greedy_missed: Action
    iterations: int
    span: float


def cell_masses(beta: float, step: float, n: int) -> np.ndarray:
    """Probability that an Exp(beta) gap falls in ``[j step, (j+1) step)``, j < n."""
    j = np.arange(n)
    return np.exp(-beta * step * j) * -np.expm1(-beta * step)


def default_grid(p: float, cost: CostModel, lam: float, points: int = 2000) -> tuple[float, float]:
    """(step, tau_max) used when no grid is given."""
    beta = cost.beta
    if lam == 0:
        tau_max = 50.0 / (p * beta)
        return tau_max / points, tau_max
    t0 = cost.c_f / (cost.c_a * lam)
    step = t0 / points
    tau_max = max(2.0 * t0, t0 + 6.0 / beta)
    return step, tau_max


def discretize(p: float, cost: CostModel, lam: float, holding_cost: float, grid: GridConfig | None = None) -> DiscreteModel:
    if not 0 < p <= 1:
        raise ValueError("request probability must lie in (0, 1]")
    if holding_cost < 0:
        raise ValueError("holding cost must be >= 0")
    grid = grid or GridConfig()
    d_step, d_max = default_grid(p, cost, lam, grid.points_per_tau_zero)
    step = d_step if grid.step is None else grid.step
    tau_max = d_max if grid.tau_max is None else grid.tau_max
    if not step > 0:
        raise ValueError(f"grid step must be > 0, got {step}")
    if lam > 0:
        # refresh threshold from the quadratic, only to validate the grid extent
        t0 = cost.c_f / (cost.c_a * lam)
        refresh = 2 * t0 / (1 + math.sqrt(1 + 2 * p * cost.beta * t0))
        if tau_max < refresh:
            raise ValueError(f"tau_max={tau_max} does not reach the refresh threshold {refresh}")
    k = int(math.ceil(tau_max / step - 1e-9))
    tau_grid = step * np.arange(k + 1)

    h = cost.beta * step
    q = math.exp(-h)
    if grid.scheme == "cell":
        first = coef = -math.expm1(-h)
    elif grid.scheme == "linear":
        # hat-function split of the exponential density between neighbours
        first = 1.0 + math.expm1(-h) / h
        coef = 4.0 * math.sinh(h / 2) ** 2 / h
    else:
        raise ValueError(f"unknown scheme {grid.scheme!r}")
    return DiscreteModel(tau_grid, p, cost, lam, holding_cost, grid.scheme, first, coef, q)


def _pick(candidates: list[np.ndarray], actions: tuple[Action, ...], tie_tol: float) -> tuple[np.ndarray, np.ndarray]:
    stack = np.vstack([np.broadcast_to(c, candidates[0].shape) for c in candidates])
    best = stack.min(axis=0)
    order = sorted(range(len(actions)), key=lambda i: _PREFERENCE.index(actions[i]))
    choice = np.full(best.shape, -1)
    for i in reversed(order):
        choice = np.where(stack[i] <= best + tie_tol, int(actions[i]), choice)
    return best, choice


def bellman(model: DiscreteModel, v11, v10, v01, v00, tie_tol: float = 0.0):
    """One application of the Bellman operator; returns new values and greedy actions."""
    p, cost, lam, ch = model.p, model.cost, model.lam, model.holding_cost
    hold = ch / cost.beta
    age = cost.c_a * lam * model.tau_grid
    lu = model.expect(p * v11 + (1 - p) * v10)
    l0 = lu[0]
    after_drop = p * v01 + (1 - p) * v00

    acts11 = (Action.SERVE_KEEP, Action.FETCH_CACHE, Action.DISCARD, Action.FETCH_DISCARD)
    n11, g11 = _pick(
        [age + hold + lu, np.full_like(age, cost.c_f + hold + l0), age + after_drop, np.full_like(age, cost.c_f + after_drop)],
        acts11,
        tie_tol,
    )
    n10, g10 = _pick([hold + lu, np.full_like(lu, after_drop)], (Action.SERVE_KEEP, Action.DISCARD), tie_tol)
    n01, g01 = _pick(
        [np.array([cost.c_f + hold + l0]), np.array([cost.c_f + after_drop])],
        (Action.FETCH_CACHE, Action.FETCH_DISCARD),
        tie_tol,
    )
    return n11, n10, float(n01[0]), float(after_drop), g11, g10, Action(int(g01[0]))


def rvi_solve(model: DiscreteModel, epsilon: float | None = None, max_iters: int = 100_000) -> ValueTable:
    """Relative value iteration from V = 0, normalised at ``(tau_c, 1, 1)``."""
    cost = model.cost
    eps = 1e-9 * cost.beta * cost.c_f if epsilon is None else epsilon
    r = model.reference_index
    k = model.size
    v11 = np.zeros(k)
    v10 = np.zeros(k)
    v01 = 0.0
    v00 = 0.0
    span = math.inf
    gain = 0.0
    for it in range(1, max_iters + 1):
        n11, n10, n01, n00, *_ = bellman(model, v11, v10, v01, v00)
        gain = n11[r]
        n11 = n11 - gain
        n10 = n10 - gain
        n01 -= gain
        n00 -= gain
        diff = np.concatenate([n11 - v11, n10 - v10, [n01 - v01, n00 - v00]])
        span = float(diff.max() - diff.min())
        v11, v10, v01, v00 = n11, n10, n01, n00
        if span < eps:
            break
    else:
        raise RVIDidNotConverge(max_iters, span)

    tie_tol = 1e-6 * cost.c_f
    *_, g11, g10, g01 = bellman(model, v11, v10, v01, v00, tie_tol=tie_tol)
    theta_hat = model.p * cost.beta * (v01 - v00)
    return ValueTable(
        model=model,
        v_requested=v11,
        v_idle=v10,
        v_missed=v01,
        v_absent=v00,
        theta_hat=float(theta_hat),
        theta_gain=float(cost.beta * gain),
        greedy_requested=g11,
        greedy_idle=g10,
        greedy_missed=g01,
        iterations=it,
        span=span,
    )


def _runs(actions: np.ndarray) -> list[tuple[int, int, int]]:
    """Run-length encode as (action, first index, last index)."""
    out = []
    start = 0
    for i in range(1, len(actions) + 1):
        if i == len(actions) or actions[i] != actions[start]:
            out.append((int(actions[start]), start, i - 1))
            start = i
    return out


def _switch(grid: np.ndarray, runs, a_from: int, a_to: int) -> float:
    for (x, _, last), (y, first, _) in zip(runs, runs[1:]):
        if x == a_from and y == a_to:
            return 0.5 * (grid[last] + grid[first])
    raise StructureError(f"no switch {a_from}->{a_to} in {runs}")


@dataclass(frozen=True)
class EmpiricalThresholds:
    regime: str
    tau_star: float | None = None
    tau_bar: float | None = None
    tau_tilde: float | None = None
    tau_zero: float | None = None
    tau_bar_idle: float | None = None


def extract_thresholds(table: ValueTable) -> EmpiricalThresholds:
    """Switch points of the greedy policy along the tau grid.

    The regime is read off the greedy action itself (fetch-and-discard on a
    miss means the holding cost is above the cap), so no closed form is used.
    Raises StructureError if the action sequence is not of threshold type.
    """
    grid = table.model.tau_grid
    r11 = _runs(table.greedy_requested)
    r10 = _runs(table.greedy_idle)
    seq11 = [a for a, _, _ in r11]
    seq10 = [a for a, _, _ in r10]
    SK, FC, D, FD = (int(a) for a in Action)

    if table.greedy_missed == Action.FETCH_DISCARD:
        if seq10 != [D]:
            raise StructureError(f"idle copies should always be discarded, got {r10}")
        if seq11 == [D]:
            return EmpiricalThresholds("above_cap", tau_zero=math.inf)
        if seq11 != [D, FD]:
            raise StructureError(f"requested pattern {r11} is not discard -> fetch-discard")
        return EmpiricalThresholds("above_cap", tau_zero=_switch(grid, r11, D, FD))

    if table.model.holding_cost == 0:
        if seq10 != [SK]:
            raise StructureError(f"idle copies should always be kept at zero holding cost, got {r10}")
        if seq11 == [SK]:
            return EmpiricalThresholds("zero", tau_star=math.inf)
        if seq11 != [SK, FC]:
            raise StructureError(f"requested pattern {r11} is not serve -> refetch")
        return EmpiricalThresholds("zero", tau_star=_switch(grid, r11, SK, FC))

    if seq11 == [SK] and seq10 == [SK]:
        # thresholds beyond the grid (static content)
        return EmpiricalThresholds("interior", tau_bar=math.inf, tau_tilde=math.inf, tau_bar_idle=math.inf)
    if seq11 not in ([SK, D, FC], [D, FC]):
        raise StructureError(f"requested pattern {r11} is not serve -> discard -> refetch")
    if seq10 not in ([SK, D], [D]):
        raise StructureError(f"idle pattern {r10} is not keep -> discard")
    tau_bar = _switch(grid, r11, SK, D) if seq11[0] == SK else 0.0
    tau_bar_idle = _switch(grid, r10, SK, D) if seq10[0] == SK else 0.0
    return EmpiricalThresholds(
        "interior",
        tau_bar=tau_bar,
        tau_tilde=_switch(grid, r11, D, FC),
        tau_bar_idle=tau_bar_idle,
    )


def values_monotone(table: ValueTable, atol: float = 1e-9) -> bool:
    return bool(np.all(np.diff(table.v_requested) >= -atol) and np.all(np.diff(table.v_idle) >= -atol))
