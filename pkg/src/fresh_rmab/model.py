"""Domain types for the fresh-caching problem.

A catalog of ``N`` dynamic contents is served through a cache of ``M`` slots.
Content ``n`` is updated at the origin as a Poisson process of rate
``lambda_n`` and requested with probability ``p_n`` out of an aggregate
Poisson request stream of rate ``beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .index import ThresholdSet

POPULARITY_TOL = 1e-12


class Action(IntEnum):
    SERVE_KEEP = 0
    FETCH_CACHE = 1
    DISCARD = 2
    FETCH_DISCARD = 3

    @property
    def is_passive(self) -> bool:
        return self in (Action.DISCARD, Action.FETCH_DISCARD)


@dataclass(frozen=True)
class ContentParams:
    id: int
    lam: float
    popularity: float

    def __post_init__(self):
        if not self.lam >= 0 or math.isinf(self.lam):
            raise ValueError(f"update rate must be finite and >= 0, got {self.lam}")
        if not 0.0 <= self.popularity <= 1.0:
            raise ValueError(f"popularity must lie in [0, 1], got {self.popularity}")


@dataclass(frozen=True)
class CostModel:
    fetch_cost: float
    ageing_cost: float
    request_rate: float

    def __post_init__(self):
        for name in ("fetch_cost", "ageing_cost", "request_rate"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and > 0, got {v}")

    # short aliases matching the usual notation
    @property
    def c_f(self) -> float:
        return self.fetch_cost

    @property
    def c_a(self) -> float:
        return self.ageing_cost

    @property
    def beta(self) -> float:
        return self.request_rate


@dataclass(frozen=True)
class ObservedState:
    """What the cache can see about one content.

    ``tau`` is the time since the cached copy was fetched; it is only
    meaningful while ``cached`` is true and must be 0 otherwise.
    """

    tau: float
    cached: bool
    requested: bool

    def __post_init__(self):
        if not (self.tau >= 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be finite and >= 0, got {self.tau}")
        if not self.cached and self.tau != 0:
            raise ValueError("an uncached content carries tau = 0")

    @classmethod
    def cached_requested(cls, tau: float) -> "ObservedState":
        return cls(tau, True, True)

    @classmethod
    def cached_idle(cls, tau: float) -> "ObservedState":
        return cls(tau, True, False)

    @classmethod
    def missed(cls) -> "ObservedState":
        return cls(0.0, False, True)

    @classmethod
    def absent(cls) -> "ObservedState":
        return cls(0.0, False, False)

    def admissible_actions(self) -> tuple[Action, ...]:
        if self.cached and self.requested:
            return tuple(Action)
        if self.cached:
            return (Action.SERVE_KEEP, Action.DISCARD)
        if self.requested:
            return (Action.FETCH_CACHE, Action.FETCH_DISCARD)
        return ()


@dataclass(frozen=True)
class Catalog:
    contents: tuple[ContentParams, ...]
    cache_capacity: int

    def __post_init__(self):
        n = len(self.contents)
        if n < 1:
            raise ValueError("catalog needs at least one content")
        # M = N is allowed here for degenerate checks; build_catalog keeps M < N
        if not 1 <= self.cache_capacity <= n:
            raise ValueError(f"cache capacity must lie in [1, {n}], got {self.cache_capacity}")
        total = math.fsum(c.popularity for c in self.contents)
        if abs(total - 1.0) > POPULARITY_TOL:
            raise ValueError(f"popularities sum to {total!r}, not 1")
        ids = [c.id for c in self.contents]
        if ids != list(range(1, n + 1)):
            raise ValueError("content ids must be 1..N in order")

    @property
    def n_contents(self) -> int:
        return len(self.contents)

    @property
    def popularity(self) -> np.ndarray:
        return np.array([c.popularity for c in self.contents])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([c.lam for c in self.contents])

    @classmethod
    def from_arrays(cls, popularity: Sequence[float], lambdas: Sequence[float], cache_capacity: int) -> "Catalog":
        if len(popularity) != len(lambdas):
            raise ValueError("popularity and lambdas differ in length")
        contents = tuple(
            ContentParams(i + 1, float(lam), float(p)) for i, (p, lam) in enumerate(zip(popularity, lambdas))
        )
        return cls(contents, int(cache_capacity))


def zipf_popularity(n_contents: int, alpha: float) -> np.ndarray:
    weights = np.array([math.pow(n, -alpha) for n in range(1, n_contents + 1)])
    # exact partial sum, no harmonic-number approximation
    return weights / math.fsum(weights)


def build_catalog(
    n_contents: int,
    zipf_alpha: float,
    lambda_spec: float | Sequence[float],
    cache_capacity: int,
    *,
    allow_full_cache: bool = False,
) -> Catalog:
    """Zipf catalog with per-content or uniform update rates.

    ``allow_full_cache`` admits ``M == N`` (and ``N == 1``), which the
    lower-bound and baseline comparisons use as degenerate reference points.
    """
    min_n = 1 if allow_full_cache else 2
    if n_contents < min_n:
        raise ValueError(f"need at least {min_n} contents, got {n_contents}")
    if cache_capacity < 1:
        raise ValueError("cache capacity must be >= 1")
    if cache_capacity > n_contents or (cache_capacity == n_contents and not allow_full_cache):
        raise ValueError(f"cache capacity {cache_capacity} must be below catalog size {n_contents}")
    if not (zipf_alpha >= 0 and math.isfinite(zipf_alpha)):
        raise ValueError(f"zipf exponent must be >= 0, got {zipf_alpha}")
    if np.ndim(lambda_spec) == 0:
        lambdas = np.full(n_contents, float(lambda_spec))
    else:
        lambdas = np.asarray(lambda_spec, dtype=float)
        if lambdas.shape != (n_contents,):
            raise ValueError(f"expected {n_contents} update rates, got {lambdas.shape}")
    if np.any(~np.isfinite(lambdas)) or np.any(lambdas <= 0):
        raise ValueError("update rates must be finite and > 0")
    return Catalog.from_arrays(zipf_popularity(n_contents, zipf_alpha), lambdas, cache_capacity)


def classify_action(state: ObservedState, thresholds: "ThresholdSet", holding_cost: float) -> Action:
    """Optimal single-content action at holding cost ``holding_cost``.

    Boundary points go to the earlier interval: ServeKeep at tau == tau_bar,
    Discard at tau == tau_tilde, and ``holding_cost == I`` uses the
    above-cap regime.
    """
    if holding_cost < 0:
        raise ValueError("holding cost must be >= 0")
    if not state.cached and not state.requested:
        raise ValueError("no action is defined for an absent, unrequested content")
    cap = thresholds.index_cap
    if holding_cost >= cap:
        regime = "above"
    elif holding_cost == 0:
        regime = "zero"
    else:
        regime = "interior"

    if not state.cached:
        return Action.FETCH_DISCARD if regime == "above" else Action.FETCH_CACHE

    tau = state.tau
    if state.requested:
        if regime == "zero":
            return Action.SERVE_KEEP if tau <= thresholds.tau_star else Action.FETCH_CACHE
        if regime == "interior":
            if tau <= thresholds.tau_bar:
                return Action.SERVE_KEEP
            if tau <= thresholds.tau_tilde:
                return Action.DISCARD
            return Action.FETCH_CACHE
        return Action.DISCARD if tau <= thresholds.tau_zero else Action.FETCH_DISCARD

    if regime == "zero":
        return Action.SERVE_KEEP
    if regime == "interior":
        return Action.SERVE_KEEP if tau <= thresholds.tau_bar else Action.DISCARD
    return Action.DISCARD
