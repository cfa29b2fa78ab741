"""Event-driven simulation of a capacity-M cache over N dynamic contents.

Requests arrive as a Poisson(beta) stream; each picks content n with
probability p_n. A cached copy's age-of-version (number of origin updates
since its fetch) is latent: it is sampled lazily, only when the copy is
served, as a Poisson(lam_n * elapsed) increment. Policies only ever see the
elapsed times since fetch, never the latent counts.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Protocol, Sequence

import numpy as np
from scipy.special import lambertw

from .index import idle_indices, index_caps
from .model import Action, Catalog, CostModel

_CHUNK = 8192


@dataclass
class CacheEntry:
    content_id: int
    fetch_time: float
    latent_aov: int = 0
    aov_sampled_up_to: float = 0.0


class CacheState:
    """At most M entries; slot arrays mirror the entries for vectorised policies."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: dict[int, CacheEntry] = {}
        self._slot: dict[int, int] = {}
        self.ids = np.zeros(capacity, dtype=np.int64)
        self.fetch_times = np.zeros(capacity)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, cid: int) -> bool:
        return cid in self.entries

    def insert(self, entry: CacheEntry) -> None:
        if len(self.entries) >= self.capacity:
            raise RuntimeError("cache is full")
        slot = len(self.entries)
        self.entries[entry.content_id] = entry
        self._slot[entry.content_id] = slot
        self.ids[slot] = entry.content_id
        self.fetch_times[slot] = entry.fetch_time

    def replace(self, victim: int, entry: CacheEntry) -> None:
        slot = self._slot.pop(victim)
        del self.entries[victim]
        self.entries[entry.content_id] = entry
        self._slot[entry.content_id] = slot
        self.ids[slot] = entry.content_id
        self.fetch_times[slot] = entry.fetch_time

    def refresh(self, cid: int, now: float) -> None:
        e = self.entries[cid]
        e.fetch_time = now
        e.latent_aov = 0
        e.aov_sampled_up_to = now
        self.fetch_times[self._slot[cid]] = now

    def occupied(self) -> tuple[np.ndarray, np.ndarray]:
        k = len(self.entries)
        return self.ids[:k], self.fetch_times[:k]


class Policy(Protocol):
    name: str

    def initial_ids(self, catalog: Catalog) -> list[int]: ...

    def decide_hit(self, tau: float, content_id: int) -> Action: ...

    def decide_miss(self, requested_id: int, cached_ids: np.ndarray, cached_taus: np.ndarray) -> int: ...


def _first_ids(catalog: Catalog) -> list[int]:
    return list(range(1, catalog.cache_capacity + 1))


class WhittlePolicy:
    """Refresh on a hit past the content's refresh threshold; on a miss drop the least index."""

    name = "whittle"
    fixed_cache = False

    def __init__(self, catalog: Catalog, cost: CostModel):
        self.cost = cost
        # index 0 unused so content ids index directly
        self.p = np.concatenate([[1.0], catalog.popularity])
        self.lam = np.concatenate([[0.0], catalog.lambdas])
        with np.errstate(divide="ignore"):
            t0 = np.where(self.lam > 0, cost.c_f / (cost.c_a * np.where(self.lam > 0, self.lam, 1.0)), np.inf)
        self.refresh_at = np.where(np.isinf(t0), np.inf, 2 * t0 / (1 + np.sqrt(1 + 2 * self.p * cost.beta * np.where(np.isinf(t0), 1.0, t0))))
        self.caps = index_caps(self.p, self.lam, cost)
        # per-content constants of the reduced index equation x + a(1 - e^-x) = b
        beta = cost.beta
        self._a_coef = beta * self.p
        self._b_const = beta * np.where(np.isinf(t0), 0.0, t0)
        self._b_quad = beta * beta * self.p / 2
        self._w_coef = self.p * cost.c_a * self.lam

    def initial_ids(self, catalog: Catalog) -> list[int]:
        return _first_ids(catalog)

    def decide_hit(self, tau: float, content_id: int) -> Action:
        return Action.FETCH_CACHE if tau > self.refresh_at[content_id] else Action.SERVE_KEEP

    def indices(self, cached_ids: np.ndarray, cached_taus: np.ndarray) -> np.ndarray:
        return idle_indices(cached_taus, self.p[cached_ids], self.lam[cached_ids], self.cost)

    def _fast_indices(self, ids: np.ndarray, taus: np.ndarray) -> np.ndarray:
        # same closed form as idle_indices, trimmed for the hot loop; all copies unexpired
        a = self._a_coef[ids] * taus
        b = self._b_const[ids] - self.cost.beta * taus - self._b_quad[ids] * taus * taus
        expo = a - b
        if expo.max() >= 700.0 or np.isinf(self.refresh_at[ids]).any():
            return self.indices(ids, taus)
        x = b - a + lambertw(a * np.exp(expo)).real
        x = np.maximum(x, 0.0)
        return self._w_coef[ids] * (x + np.expm1(-x))

    def decide_miss(self, requested_id: int, cached_ids: np.ndarray, cached_taus: np.ndarray) -> int:
        expired = cached_taus >= self.refresh_at[cached_ids]
        if expired.any():
            # index 0 is the minimum possible; ties go to the larger id
            return int(cached_ids[expired].max())
        w = self._fast_indices(cached_ids, cached_taus)
        cap = self.caps[requested_id]
        lowest = w.min()
        if cap < lowest:
            return requested_id
        tied = cached_ids[w == lowest]
        best = int(tied.max())
        if cap == lowest:
            best = max(best, requested_id)
        return best


class PopularBaseline:
    """Static top-M cache with threshold refresh; everything else is fetched and dropped."""

    name = "popular"
    fixed_cache = True

    def __init__(self, catalog: Catalog, cost: CostModel):
        self._whittle = WhittlePolicy(catalog, cost)
        order = sorted(range(1, catalog.n_contents + 1), key=lambda n: (-catalog.contents[n - 1].popularity, n))
        self._top = order[: catalog.cache_capacity]

    def initial_ids(self, catalog: Catalog) -> list[int]:
        return list(self._top)

    def decide_hit(self, tau: float, content_id: int) -> Action:
        return self._whittle.decide_hit(tau, content_id)

    def decide_miss(self, requested_id: int, cached_ids: np.ndarray, cached_taus: np.ndarray) -> int:
        return requested_id


class AlwaysFetch:
    name = "always_fetch"
    fixed_cache = True

    def __init__(self, catalog: Catalog, cost: CostModel):
        pass

    def initial_ids(self, catalog: Catalog) -> list[int]:
        return _first_ids(catalog)

    def decide_hit(self, tau: float, content_id: int) -> Action:
        return Action.FETCH_CACHE

    def decide_miss(self, requested_id: int, cached_ids: np.ndarray, cached_taus: np.ndarray) -> int:
        return requested_id


class NeverRefresh:
    """Serve cached copies forever; on a miss evict the oldest copy."""

    name = "never_refresh"
    fixed_cache = False

    def __init__(self, catalog: Catalog, cost: CostModel):
        pass

    def initial_ids(self, catalog: Catalog) -> list[int]:
        return _first_ids(catalog)

    def decide_hit(self, tau: float, content_id: int) -> Action:
        return Action.SERVE_KEEP

    def decide_miss(self, requested_id: int, cached_ids: np.ndarray, cached_taus: np.ndarray) -> int:
        return int(cached_ids[np.argmax(cached_taus)])


POLICIES = {cls.name: cls for cls in (WhittlePolicy, PopularBaseline, AlwaysFetch, NeverRefresh)}


def make_policy(name: str, catalog: Catalog, cost: CostModel) -> Policy:
    try:
        return POLICIES[name](catalog, cost)
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None


def make_whittle_policy(catalog: Catalog, cost: CostModel) -> WhittlePolicy:
    return WhittlePolicy(catalog, cost)


def make_popular_baseline(catalog: Catalog, cost: CostModel) -> PopularBaseline:
    return PopularBaseline(catalog, cost)


@dataclass(frozen=True)
class SimReport:
    horizon: float
    warmup: float
    avg_cost_rate: float
    fetch_cost_rate: float
    ageing_cost_rate: float
    hit_rate: float
    fetch_on_hit_rate: float
    request_count: int
    fetch_count: int
    served_aov_total: int
    seed: int


class _Streams:
    """Independent generators for arrivals, content choice, per-content AoV and init."""

    def __init__(self, seed: int, n_contents: int):
        root = np.random.SeedSequence(seed)
        arr, sel, init, aov = root.spawn(4)
        self.arrivals = np.random.default_rng(arr)
        self.selection = np.random.default_rng(sel)
        self.init = np.random.default_rng(init)
        self.aov = [np.random.default_rng(s) for s in aov.spawn(n_contents + 1)]


def _requests(streams: _Streams, beta: float, cum_p: np.ndarray, horizon: float):
    t = 0.0
    while True:
        gaps = streams.arrivals.exponential(1.0 / beta, _CHUNK)
        picks = np.searchsorted(cum_p, streams.selection.random(_CHUNK), side="right") + 1
        picks = np.minimum(picks, len(cum_p))
        times = t + np.cumsum(gaps)
        for tk, ek in zip(times.tolist(), picks.tolist()):
            if tk > horizon:
                return
            yield tk, ek
        t = float(times[-1])


def run(
    catalog: Catalog,
    cost: CostModel,
    policy: Policy,
    horizon: float,
    warmup: float | None = None,
    seed: int = 0,
    *,
    random_init: bool = False,
    trace: list | None = None,
) -> SimReport:
    """Simulate ``(0, horizon]``; costs are counted for requests after ``warmup``.

    ``trace``, if given, collects ``(t, content_id, kind, aov)`` for every
    request, with kind in {"serve", "refresh", "miss_cache", "miss_drop"}.
    """
    if warmup is None:
        warmup = 0.1 * horizon
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValueError(f"horizon must be finite and > 0, got {horizon}")
    if not 0 <= warmup < horizon:
        raise ValueError(f"need 0 <= warmup < horizon, got warmup={warmup}, horizon={horizon}")

    n = catalog.n_contents
    m = catalog.cache_capacity
    lam = np.concatenate([[0.0], catalog.lambdas]).tolist()
    cum_p = np.cumsum(catalog.popularity)
    cum_p[-1] = 1.0
    streams = _Streams(seed, n)
    cache = CacheState(m)

    if random_init:
        fixed = getattr(policy, "fixed_cache", False)
        ids = policy.initial_ids(catalog) if fixed else sorted(streams.init.choice(np.arange(1, n + 1), m, replace=False).tolist())
        refresh_at = getattr(policy, "refresh_at", None)
        for cid in ids:
            span = refresh_at[cid] if refresh_at is not None and math.isfinite(refresh_at[cid]) else 1.0 / cost.beta
            start = -streams.init.uniform(0.0, span)
            cache.insert(CacheEntry(int(cid), start, 0, start))
    else:
        for cid in policy.initial_ids(catalog):
            cache.insert(CacheEntry(int(cid), 0.0, 0, 0.0))

    c_f, c_a = cost.c_f, cost.c_a
    requests = hits = hit_fetches = fetches = 0
    aov_total = 0
    for t, e in _requests(streams, cost.beta, cum_p, horizon):
        measured = t > warmup
        entry = cache.entries.get(e)
        if entry is not None:
            tau = t - entry.fetch_time
            action = policy.decide_hit(tau, e)
            if action == Action.FETCH_CACHE:
                cache.refresh(e, t)
                kind, aov = "refresh", 0
                if measured:
                    fetches += 1
                    hit_fetches += 1
            elif action == Action.SERVE_KEEP:
                gap = t - entry.aov_sampled_up_to
                if gap > 0 and lam[e] > 0:
                    entry.latent_aov += int(streams.aov[e].poisson(lam[e] * gap))
                entry.aov_sampled_up_to = t
                kind, aov = "serve", entry.latent_aov
                if measured:
                    aov_total += aov
            else:
                raise ValueError(f"hit decisions must be serve or refresh, got {action!r}")
            if measured:
                hits += 1
        else:
            aov = 0
            if len(cache) < m:
                cache.insert(CacheEntry(e, t, 0, t))
                kind = "miss_cache"
            else:
                ids, fetched = cache.occupied()
                victim = policy.decide_miss(e, ids.copy(), t - fetched)
                if victim == e:
                    kind = "miss_drop"
                elif victim in cache:
                    cache.replace(victim, CacheEntry(e, t, 0, t))
                    kind = "miss_cache"
                else:
                    raise ValueError(f"policy evicted {victim}, which is neither cached nor requested")
            if measured:
                fetches += 1
        if measured:
            requests += 1
        if trace is not None:
            trace.append((t, e, kind, aov))

    span = horizon - warmup
    fetch_rate = c_f * fetches / span
    ageing_rate = c_a * aov_total / span
    return SimReport(
        horizon=horizon,
        warmup=warmup,
        avg_cost_rate=fetch_rate + ageing_rate,
        fetch_cost_rate=fetch_rate,
        ageing_cost_rate=ageing_rate,
        hit_rate=hits / requests if requests else 0.0,
        fetch_on_hit_rate=hit_fetches / hits if hits else 0.0,
        request_count=requests,
        fetch_count=fetches,
        served_aov_total=aov_total,
        seed=seed,
    )


# -- replications ---------------------------------------------------------------


@dataclass(frozen=True)
class RunSpec:
    catalog: Catalog
    cost: CostModel
    policy: str
    horizon: float
    warmup: float | None = None
    random_init: bool = False

    def execute(self, seed: int) -> SimReport:
        pol = make_policy(self.policy, self.catalog, self.cost)
        return run(self.catalog, self.cost, pol, self.horizon, self.warmup, seed, random_init=self.random_init)


SUMMARY_FIELDS = ("avg_cost_rate", "fetch_cost_rate", "ageing_cost_rate", "hit_rate", "fetch_on_hit_rate", "request_count")


@dataclass(frozen=True)
class FieldStats:
    mean: float
    std: float
    ci95: float

    @property
    def low(self) -> float:
        return self.mean - self.ci95

    @property
    def high(self) -> float:
        return self.mean + self.ci95


@dataclass
class Replication:
    reports: list[SimReport]
    stats: dict[str, FieldStats] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.reports)


def derive_seeds(master_seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(n, dtype=np.uint64)]


def summarize(reports: Sequence[SimReport]) -> dict[str, FieldStats]:
    out = {}
    n = len(reports)
    for name in SUMMARY_FIELDS:
        x = np.array([getattr(r, name) for r in reports], dtype=float)
        mean = math.fsum(x) / n
        std = float(np.std(x, ddof=1)) if n > 1 else 0.0
        out[name] = FieldStats(mean, std, 1.96 * std / math.sqrt(n))
    return out


def replicate(
    spec: RunSpec,
    n_replications: int,
    master_seed: int = 0,
    *,
    seeds: Sequence[int] | None = None,
    jobs: int = 1,
) -> Replication:
    if n_replications < 2:
        raise ValueError("need at least 2 replications for a confidence interval")
    seeds = derive_seeds(master_seed, n_replications) if seeds is None else list(seeds)
    if len(seeds) != n_replications:
        raise ValueError("one seed per replication")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(spec.execute, seeds))
    else:
        reports = [spec.execute(s) for s in seeds]
    return Replication(reports, summarize(reports))


def report_dict(report: SimReport) -> dict:
    return asdict(report)


def report_from_dict(d: dict) -> SimReport:
    names = {f.name for f in fields(SimReport)}
    return SimReport(**{k: v for k, v in d.items() if k in names})
