import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fresh_rmab.dp import (
    GridConfig,
    RVIDidNotConverge,
    StructureError,
    ValueTable,
    cell_masses,
    discretize,
    extract_thresholds,
    rvi_solve,
    values_monotone,
)
from fresh_rmab.index import index_cap, relaxed_value, tau_star, thresholds
from fresh_rmab.model import Action, CostModel


def test_first_cell_mass():
    m = discretize(1.0, CostModel(1.0, 1.0, 5.0), 1.0, 0.0, GridConfig(step=0.01, tau_max=2.0, scheme="cell"))
    assert m.kernel_row(0)[0] == pytest.approx(1 - math.exp(-0.05), rel=1e-14)
    assert m.kernel_row(0)[0] == pytest.approx(0.04877, abs=1e-5)
    assert cell_masses(5.0, 0.01, 3)[0] == pytest.approx(1 - math.exp(-0.05), rel=1e-14)


@pytest.mark.parametrize("scheme", ["cell", "linear"])
def test_rows_stochastic_and_tail(scheme):
    # beta * tau_max = 20
    m = discretize(1.0, CostModel(1.0, 1.0, 5.0), 1.0, 0.1, GridConfig(step=0.01, tau_max=4.0, scheme=scheme))
    for i in (0, 17, m.size - 2, m.size - 1):
        row = m.kernel_row(i)
        assert math.fsum(row) == pytest.approx(1.0, abs=1e-12)
        assert np.all(row >= 0)
    if scheme == "cell":
        assert m.kernel_row(0)[-1] == pytest.approx(math.exp(-20), rel=1e-6)


@given(
    st.floats(0.5, 10.0),
    st.floats(1e-3, 0.5),
    st.integers(3, 60),
    st.sampled_from(["cell", "linear"]),
    st.integers(0, 2**32 - 1),
)
def test_expectation_matches_matrix(beta, step, k, scheme, seed):
    m = discretize(1.0, CostModel(1.0, 1.0, beta), 0.0, 0.0, GridConfig(step=step, tau_max=step * k, scheme=scheme))
    K = m.kernel_matrix()
    assert np.allclose(K.sum(axis=1), 1.0, atol=1e-12)
    u = np.random.default_rng(seed).normal(size=m.size)
    assert np.allclose(m.expect(u), K @ u, atol=1e-11)


def test_linear_kernel_first_moment():
    # the hat split keeps the mean jump exact away from the tail
    beta, step = 3.0, 0.01
    m = discretize(1.0, CostModel(1.0, 1.0, beta), 0.0, 0.0, GridConfig(step=step, tau_max=20.0))
    w = m.offset_weights(m.size)
    assert math.fsum(w * m.tau_grid) == pytest.approx(1 / beta, rel=1e-9)


def test_grid_validation():
    cost = CostModel(1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        discretize(0.5, cost, 1.0, 0.1, GridConfig(step=0.0, tau_max=3.0))
    with pytest.raises(ValueError):
        discretize(0.5, cost, 1.0, 0.1, GridConfig(step=0.001, tau_max=0.5 * tau_star(0.5, cost, 1.0)))
    with pytest.raises(ValueError):
        discretize(0.5, cost, 1.0, 0.1, GridConfig(scheme="spline"))
    with pytest.raises(ValueError):
        discretize(0.5, cost, 1.0, -0.1)


def test_default_grid_extent():
    cost = CostModel(1.0, 1.0, 2.0)
    m = discretize(0.5, cost, 1.0, 0.2)
    t0 = 1.0
    assert m.step == pytest.approx(t0 / 2000)
    assert m.tau_grid[-1] >= max(2 * t0, t0 + 6 / cost.beta) - 1e-12


def test_static_content_costs_nothing():
    table = rvi_solve(discretize(0.5, CostModel(1.0, 1.0, 2.0), 0.0, 0.0))
    assert abs(table.theta_hat) < 1e-6


def test_above_cap_pays_fetch_rate():
    p, cost, lam = 0.5, CostModel(1.0, 1.0, 2.0), 1.0
    ch = 1.2 * index_cap(p, cost, lam)
    table = rvi_solve(discretize(p, cost, lam, ch))
    assert table.theta_hat == pytest.approx(p * cost.beta * cost.c_f, rel=0.01)
    assert table.greedy_missed == Action.FETCH_DISCARD
    assert np.all(table.greedy_idle == Action.DISCARD)


def test_interior_example():
    p, cost, lam = 0.5, CostModel(1.0, 1.0, 2.0), 1.0
    table = rvi_solve(discretize(p, cost, lam, 0.2))
    assert table.theta_hat == pytest.approx(0.845, rel=0.02)
    assert table.theta_hat == pytest.approx(relaxed_value(0.2, p, cost, lam).theta, rel=1e-5)
    # two routes to the gain agree once converged
    assert table.theta_gain == pytest.approx(table.theta_hat, rel=1e-6)
    assert table.v_requested[table.model.reference_index] == 0.0
    assert values_monotone(table)


CASES = [
    (0.5, CostModel(1.0, 1.0, 2.0), 1.0, 0.2),
    (1.0, CostModel(1.0, 1.0, 2.0), 1.0, 0.0),
    (0.2, CostModel(1.0, 0.1, 5.0), 0.5, 0.3),
]


@pytest.mark.parametrize("p,cost,lam,ch", CASES)
def test_switch_points_within_one_step(p, cost, lam, ch):
    table = rvi_solve(discretize(p, cost, lam, ch))
    emp = extract_thresholds(table)
    ts = thresholds(ch, p, cost, lam)
    step = table.model.step
    if ch == 0:
        assert emp.regime == "zero"
        assert abs(emp.tau_star - ts.tau_star) <= step
    else:
        assert emp.regime == "interior"
        assert abs(emp.tau_bar - ts.tau_bar) <= step
        assert abs(emp.tau_tilde - ts.tau_tilde) <= step
        assert abs(emp.tau_bar_idle - ts.tau_bar) <= step


def test_above_cap_switch():
    p, cost, lam = 0.5, CostModel(1.0, 1.0, 2.0), 1.0
    table = rvi_solve(discretize(p, cost, lam, 1.0))
    emp = extract_thresholds(table)
    assert emp.regime == "above_cap"
    assert abs(emp.tau_zero - 1.0) <= table.model.step


def test_refinement_shrinks_error():
    p, cost, lam, ch = 0.2, CostModel(1.0, 0.1, 5.0), 0.5, 0.3
    theta = relaxed_value(ch, p, cost, lam).theta
    errs = [abs(rvi_solve(discretize(p, cost, lam, ch, GridConfig(points_per_tau_zero=n))).theta_hat - theta) for n in (500, 1000, 2000)]
    assert errs[0] > errs[1] > errs[2]


def test_structure_violation_is_reported():
    p, cost, lam = 0.5, CostModel(1.0, 1.0, 2.0), 1.0
    table = rvi_solve(discretize(p, cost, lam, 0.2))
    bad = np.array(table.greedy_requested)
    bad[len(bad) // 2 :: 7] = int(Action.SERVE_KEEP)
    forged = ValueTable(**{**table.__dict__, "greedy_requested": bad})
    with pytest.raises(StructureError):
        extract_thresholds(forged)


def test_non_convergence_is_reported():
    with pytest.raises(RVIDidNotConverge) as info:
        rvi_solve(discretize(0.5, CostModel(1.0, 1.0, 2.0), 1.0, 0.2), max_iters=2)
    assert info.value.span > 0
