"""Whittle-index caching of dynamic content: closed-form index, DP oracle and simulator."""

__version__ = "0.1.0"

from .model import Action, Catalog, ContentParams, CostModel, ObservedState, build_catalog, classify_action, zipf_popularity
from .index import (
    DualResult,
    Regime,
    ThresholdSet,
    dual_lower_bound,
    index_cap,
    solve_gap,
    tau_star,
    tau_zero,
    thresholds,
    whittle_index,
)
from .sim import SimReport, make_popular_baseline, make_whittle_policy, replicate, run

__all__ = [
    "Action",
    "Catalog",
    "ContentParams",
    "CostModel",
    "DualResult",
    "ObservedState",
    "Regime",
    "SimReport",
    "ThresholdSet",
    "build_catalog",
    "classify_action",
    "dual_lower_bound",
    "index_cap",
    "make_popular_baseline",
    "make_whittle_policy",
    "replicate",
    "run",
    "solve_gap",
    "tau_star",
    "tau_zero",
    "thresholds",
    "whittle_index",
    "zipf_popularity",
]
