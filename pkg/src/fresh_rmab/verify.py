"""Cross-check the closed-form solution against the DP oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dp import GridConfig, discretize, extract_thresholds, rvi_solve
from .index import Regime, relaxed_value, thresholds
from .model import CostModel


@dataclass(frozen=True)
class Check:
    quantity: str
    closed_form: float
    oracle: float
    allowed: float

    @property
    def diff(self) -> float:
        if math.isinf(self.closed_form) and self.closed_form == self.oracle:
            return 0.0
        return abs(self.oracle - self.closed_form)

    @property
    def ok(self) -> bool:
        return self.diff <= self.allowed


@dataclass(frozen=True)
class Verification:
    p: float
    cost: CostModel
    lam: float
    holding_cost: float
    regime: str
    oracle_regime: str
    step: float
    theta: float
    theta_hat: float
    checks: tuple[Check, ...]

    @property
    def ok(self) -> bool:
        return self.regime == self.oracle_regime and all(c.ok for c in self.checks)

    @property
    def theta_rel_error(self) -> float:
        scale = self.theta if self.theta > 0 else self.p * self.cost.beta * self.cost.c_f
        return abs(self.theta_hat - self.theta) / scale


def verify_case(
    p: float,
    cost: CostModel,
    lam: float,
    holding_cost: float,
    *,
    points_per_tau_zero: int = 2000,
    scheme: str = "linear",
    theta_rtol: float = 0.02,
) -> Verification:
    """Solve the discretized chain and compare theta and switch points.

    Switch points must land within one grid step of the closed-form
    thresholds. When the closed-form theta is zero the tolerance is taken
    relative to ``p beta c_f`` instead. Exactly at the index cap the
    relaxed problem is indifferent between keeping and fetch-and-discard,
    so only theta is compared there.
    """
    rv = relaxed_value(holding_cost, p, cost, lam)
    ts = thresholds(holding_cost, p, cost, lam)
    model = discretize(p, cost, lam, holding_cost, GridConfig(scheme=scheme, points_per_tau_zero=points_per_tau_zero))
    table = rvi_solve(model)
    emp = extract_thresholds(table)
    step = model.step
    slack = step * (1 + 1e-9)

    scale = rv.theta if rv.theta > 0 else p * cost.beta * cost.c_f
    checks = [Check("theta", rv.theta, table.theta_hat, theta_rtol * scale)]
    regime = ts.regime.value
    if math.isclose(holding_cost, ts.index_cap, rel_tol=1e-9):
        return Verification(p, cost, lam, holding_cost, regime, regime, step, rv.theta, table.theta_hat, tuple(checks))
    if regime == Regime.ZERO.value:
        checks.append(Check("tau_star", ts.tau_star, emp.tau_star if emp.tau_star is not None else math.nan, slack))
    elif regime == Regime.INTERIOR.value:
        for name in ("tau_bar", "tau_tilde"):
            got = getattr(emp, name)
            checks.append(Check(name, getattr(ts, name), got if got is not None else math.nan, slack))
        got = emp.tau_bar_idle
        checks.append(Check("tau_bar_idle", ts.tau_bar, got if got is not None else math.nan, slack))
    else:
        got = emp.tau_zero
        checks.append(Check("tau_zero", ts.tau_zero, got if got is not None else math.nan, slack))
    return Verification(p, cost, lam, holding_cost, regime, emp.regime, step, rv.theta, table.theta_hat, tuple(checks))


def diff_table(results: list[Verification]) -> str:
    head = f"{'C_h':>12} {'regime':>10} {'quantity':>13} {'closed_form':>16} {'oracle':>16} {'diff':>11} {'allowed':>11}  ok"
    lines = [head]
    for r in results:
        regime = r.regime if r.regime == r.oracle_regime else f"{r.regime}!={r.oracle_regime}"
        for c in r.checks:
            lines.append(
                f"{r.holding_cost:12.6g} {regime:>10} {c.quantity:>13} {c.closed_form:16.10g} {c.oracle:16.10g} {c.diff:11.3e} {c.allowed:11.3e}  {'yes' if c.ok else 'NO'}"
            )
    return "\n".join(lines)
