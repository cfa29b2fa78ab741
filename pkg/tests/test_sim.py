import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fresh_rmab.index import index_cap, tau_star, whittle_index
from fresh_rmab.model import Action, Catalog, CostModel, ObservedState, build_catalog
from fresh_rmab.sim import (
    AlwaysFetch,
    NeverRefresh,
    RunSpec,
    derive_seeds,
    make_policy,
    make_popular_baseline,
    make_whittle_policy,
    replicate,
    report_dict,
    report_from_dict,
    run,
)

RENEWAL_COST = CostModel(1.0, 1.0, 2.0)
RENEWAL_RATE = 2 * (math.sqrt(5) - 1) / 2  # beta c_a lam tau* with tau* the golden ratio conjugate


def single(lam=1.0):
    return build_catalog(1, 1.0, lam, 1, allow_full_cache=True)


def small_catalog(lam=0.5, m=4):
    return build_catalog(20, 1.0, lam, m)


class Recorder:
    """Wraps a policy and records everything it is shown."""

    def __init__(self, inner, capacity):
        self.inner = inner
        self.name = inner.name
        self.fixed_cache = getattr(inner, "fixed_cache", False)
        self.capacity = capacity
        self.hits = []
        self.misses = []

    def initial_ids(self, catalog):
        return self.inner.initial_ids(catalog)

    def decide_hit(self, tau, content_id):
        self.hits.append((tau, content_id))
        return self.inner.decide_hit(tau, content_id)

    def decide_miss(self, requested_id, cached_ids, cached_taus):
        assert len(cached_ids) == self.capacity
        assert len(set(cached_ids.tolist())) == len(cached_ids)
        assert requested_id not in cached_ids
        self.misses.append((requested_id, cached_ids.copy(), cached_taus.copy()))
        return self.inner.decide_miss(requested_id, cached_ids, cached_taus)


def test_deterministic_for_a_seed():
    cat, cost = small_catalog(), CostModel(1.0, 0.1, 5.0)
    a = run(cat, cost, make_whittle_policy(cat, cost), 2000.0, seed=7)
    b = run(cat, cost, make_whittle_policy(cat, cost), 2000.0, seed=7)
    c = run(cat, cost, make_whittle_policy(cat, cost), 2000.0, seed=8)
    assert a == b
    assert a != c


def test_cost_identity():
    cat, cost = small_catalog(lam=2.0), CostModel(2.0, 0.3, 5.0)
    r = run(cat, cost, make_whittle_policy(cat, cost), 3000.0, warmup=300.0, seed=1)
    span = r.horizon - r.warmup
    assert r.avg_cost_rate == pytest.approx(r.fetch_cost_rate + r.ageing_cost_rate, abs=1e-9)
    assert r.fetch_cost_rate * span == pytest.approx(cost.c_f * r.fetch_count, rel=1e-12)
    assert r.ageing_cost_rate * span == pytest.approx(cost.c_a * r.served_aov_total, rel=1e-12)
    assert min(r.avg_cost_rate, r.fetch_cost_rate, r.ageing_cost_rate) >= 0


@pytest.mark.parametrize("name", ["whittle", "popular", "never_refresh", "always_fetch"])
def test_capacity_and_inputs(name):
    cat, cost = small_catalog(), CostModel(1.0, 0.1, 5.0)
    rec = Recorder(make_policy(name, cat, cost), cat.cache_capacity)
    trace = []
    run(cat, cost, rec, 500.0, seed=3, trace=trace)
    for tau, cid in rec.hits:
        assert isinstance(tau, float) and tau >= 0 and isinstance(cid, int)
    for req, ids, taus in rec.misses:
        assert ids.dtype.kind == "i" and taus.dtype.kind == "f" and np.all(taus >= 0)
    # every request is either a hit or a full-cache miss (the cache starts full)
    assert len(rec.hits) + len(rec.misses) == len(trace)


def test_policy_never_sees_latent_state():
    # same popularity and seed, very different update rates: the policy's view must not change
    cost = CostModel(1.0, 0.1, 5.0)
    slow = build_catalog(20, 1.0, 0.01, 4)
    fast = build_catalog(20, 1.0, 5.0, 4)
    views = []
    for cat in (slow, fast):
        rec = Recorder(make_whittle_policy(slow, cost), 4)
        run(cat, cost, rec, 500.0, seed=11)
        views.append((rec.hits, [(r, i.tolist(), t.tolist()) for r, i, t in rec.misses]))
    assert views[0] == views[1]


def test_latent_aov_increments_are_poisson():
    lam = 0.7
    cat, cost = single(lam), CostModel(1.0, 1.0, 3.0)
    trace = []
    run(cat, cost, NeverRefresh(cat, cost), 20000.0, warmup=1.0, seed=5, trace=trace)
    serves = [(t, aov) for t, _, kind, aov in trace if kind == "serve"]
    t = np.array([s[0] for s in serves])
    nu = np.array([s[1] for s in serves])
    inc = np.diff(nu)
    mean_inc = lam * np.diff(t)
    assert np.all(inc >= 0)
    z = (inc.sum() - mean_inc.sum()) / math.sqrt(mean_inc.sum())
    assert abs(z) < 3
    # Poisson dispersion: variance equals mean
    assert np.var(inc - mean_inc) == pytest.approx(mean_inc.mean(), rel=0.05)


def test_always_fetch_costs_fetch_rate():
    cat = single()
    rep = replicate(RunSpec(cat, RENEWAL_COST, "always_fetch", 5000.0), 10, master_seed=2)
    s = rep.stats["avg_cost_rate"]
    # three standard errors, so a fixed seed is not a 1-in-20 coin flip
    assert abs(s.mean - RENEWAL_COST.beta * RENEWAL_COST.c_f) <= 3 * s.std / math.sqrt(10)
    for r in rep.reports:
        assert r.avg_cost_rate == pytest.approx(RENEWAL_COST.c_f * r.request_count / (r.horizon - r.warmup))


def test_renewal_ci_covers_closed_form():
    rep = replicate(RunSpec(single(), RENEWAL_COST, "whittle", 2e4), 20, master_seed=9)
    s = rep.stats["avg_cost_rate"]
    assert s.low <= RENEWAL_RATE <= s.high


def test_static_full_cache_costs_nothing():
    cat = build_catalog(5, 1.0, 1.0, 5, allow_full_cache=True)
    cat = Catalog.from_arrays(cat.popularity, np.zeros(5), 5)
    cost = CostModel(1.0, 1.0, 2.0)
    for policy in (NeverRefresh(cat, cost), make_whittle_policy(cat, cost)):
        r = run(cat, cost, policy, 1000.0, seed=0)
        assert r.avg_cost_rate == 0.0


def test_popular_baseline_behaviour():
    cat, cost = small_catalog(m=3), CostModel(1.0, 0.1, 5.0)
    pol = make_popular_baseline(cat, cost)
    assert pol.initial_ids(cat) == [1, 2, 3]
    trace = []
    r = run(cat, cost, pol, 2000.0, seed=4, trace=trace)
    kinds = {}
    for _, e, kind, _ in trace:
        kinds.setdefault(e, set()).add(kind)
    assert kinds[1] <= {"serve", "refresh"}
    assert kinds[4] == {"miss_drop"}
    assert all(kinds[e] == {"miss_drop"} for e in kinds if e > 3)
    refresh = pol.decide_hit
    assert refresh(0.0, 1) == Action.SERVE_KEEP
    assert refresh(tau_star(cat.popularity[0], cost, 0.5) * 1.001, 1) == Action.FETCH_CACHE


def test_full_cache_baseline_matches_whittle():
    cat = build_catalog(6, 1.0, 0.8, 6, allow_full_cache=True)
    cost = CostModel(1.0, 0.5, 3.0)
    a = run(cat, cost, make_whittle_policy(cat, cost), 3000.0, seed=21)
    b = run(cat, cost, make_popular_baseline(cat, cost), 3000.0, seed=21)
    assert a == b


# -- Whittle eviction ---------------------------------------------------------------


@pytest.fixture
def wcat():
    return build_catalog(10, 1.0, np.linspace(0.2, 2.0, 10), 3), CostModel(1.0, 0.2, 4.0)


def test_fresh_copy_is_served(wcat):
    cat, cost = wcat
    pol = make_whittle_policy(cat, cost)
    assert pol.decide_hit(0.0, 1) == Action.SERVE_KEEP


def test_expired_copy_is_evicted_first(wcat):
    cat, cost = wcat
    pol = make_whittle_policy(cat, cost)
    ts2 = tau_star(cat.popularity[1], cost, cat.lambdas[1])
    victim = pol.decide_miss(9, np.array([1, 2, 3]), np.array([0.0, ts2 * 1.01, 0.0]))
    assert victim == 2


def test_unpopular_request_is_dropped(wcat):
    cat, cost = wcat
    pol = make_whittle_policy(cat, cost)
    ids, taus = np.array([1, 2, 3]), np.zeros(3)
    caps = [index_cap(cat.popularity[i - 1], cost, cat.lambdas[i - 1]) for i in (1, 2, 3)]
    cap10 = index_cap(cat.popularity[9], cost, cat.lambdas[9])
    assert cap10 < min(caps)
    assert pol.decide_miss(10, ids, taus) == 10


def test_ties_evict_larger_id():
    cat = build_catalog(5, 0.0, 1.0, 3)
    cost = CostModel(1.0, 1.0, 2.0)
    pol = make_whittle_policy(cat, cost)
    assert pol.decide_miss(5, np.array([3, 1, 2]), np.array([0.1, 0.1, 0.1])) == 3
    ts = tau_star(0.2, cost, 1.0)
    assert pol.decide_miss(5, np.array([1, 2, 3]), np.array([ts, 0.0, ts])) == 3


@settings(max_examples=40)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3), st.integers(4, 10))
def test_eviction_matches_scalar_indices(fracs, req):
    cat = build_catalog(10, 1.0, np.linspace(0.2, 2.0, 10), 3)
    cost = CostModel(1.0, 0.2, 4.0)
    pol = make_whittle_policy(cat, cost)
    ids = np.array([1, 2, 3])
    taus = np.array([f * 1.2 * tau_star(cat.popularity[i - 1], cost, cat.lambdas[i - 1]) for f, i in zip(fracs, ids)])
    w = [whittle_index(ObservedState.cached_idle(float(t)), cat.popularity[i - 1], cost, cat.lambdas[i - 1]) for t, i in zip(taus, ids)]
    cap = whittle_index(ObservedState.missed(), cat.popularity[req - 1], cost, cat.lambdas[req - 1])
    cands = list(zip(w, ids.tolist())) + [(cap, req)]
    lowest = min(c[0] for c in cands)
    # near-ties can legitimately resolve either way
    close = [i for v, i in cands if v <= lowest * (1 + 1e-9) + 1e-15]
    assert pol.decide_miss(req, ids, taus) in close


# -- replication helpers ------------------------------------------------------------


def test_identical_seeds_zero_variance():
    spec = RunSpec(small_catalog(), CostModel(1.0, 0.1, 5.0), "whittle", 500.0)
    rep = replicate(spec, 3, seeds=[5, 5, 5])
    assert rep.stats["avg_cost_rate"].std == 0.0
    assert rep.stats["avg_cost_rate"].ci95 == 0.0


def test_ci_shrinks_with_replications():
    spec = RunSpec(single(), RENEWAL_COST, "whittle", 500.0)
    few = replicate(spec, 6, master_seed=1).stats["avg_cost_rate"].ci95
    many = replicate(spec, 54, master_seed=1).stats["avg_cost_rate"].ci95
    assert 1.5 < few / many < 6.0  # sqrt(9) = 3 in expectation


def test_derived_seeds_are_distinct_and_stable():
    a = derive_seeds(123, 50)
    assert len(set(a)) == 50
    assert a == derive_seeds(123, 50)
    assert a[:10] == derive_seeds(123, 10)


def test_replicate_validation():
    spec = RunSpec(single(), RENEWAL_COST, "whittle", 100.0)
    with pytest.raises(ValueError):
        replicate(spec, 1)
    with pytest.raises(ValueError):
        replicate(spec, 3, seeds=[1, 2])


def test_run_validation():
    cat, cost = single(), RENEWAL_COST
    pol = make_whittle_policy(cat, cost)
    for horizon, warmup in ((0.0, None), (math.inf, None), (10.0, 10.0), (10.0, -1.0)):
        with pytest.raises(ValueError):
            run(cat, cost, pol, horizon, warmup)
    with pytest.raises(ValueError):
        make_policy("lru", cat, cost)


def test_random_init_is_reproducible():
    cat, cost = small_catalog(), CostModel(1.0, 0.1, 5.0)
    a = run(cat, cost, make_whittle_policy(cat, cost), 300.0, seed=2, random_init=True)
    b = run(cat, cost, make_whittle_policy(cat, cost), 300.0, seed=2, random_init=True)
    assert a == b


def test_report_round_trip():
    cat, cost = small_catalog(), CostModel(1.0, 0.1, 5.0)
    r = run(cat, cost, AlwaysFetch(cat, cost), 200.0, seed=1)
    assert report_from_dict(report_dict(r)) == r
