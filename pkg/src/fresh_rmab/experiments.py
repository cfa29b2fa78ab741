"""Experiment configs, figure presets, sweeps and their CSV/JSON outputs."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .index import dual_lower_bound
from .model import CostModel, build_catalog
from .sim import POLICIES, RunSpec, SimReport, derive_seeds, summarize

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SERIES_KEYS = ("lam", "fetch_cost", "ageing_cost", "request_rate")
SEED_ENV = "FRESH_RMAB_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "custom"
    n_contents: int = 1000
    zipf_alpha: float = 1.0
    lam: float = 0.01
    fetch_cost: float = 1.0
    ageing_cost: float = 0.1
    request_rate: float = 5.0
    cache_sizes: tuple[int, ...] = (40, 50, 60, 70, 80, 90, 100)
    series_key: str | None = None
    series_values: tuple[float, ...] = ()
    policies: tuple[str, ...] = ("whittle", "popular")
    horizon: float = 1e5
    warmup: float | None = None
    replications: int = 10
    seed: int = 0
    lower_bound: bool = True
    random_init: bool = False
    output_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.n_contents >= 2, "n_contents must be >= 2")
        need(self.zipf_alpha >= 0, "zipf_alpha must be >= 0")
        need(len(self.cache_sizes) > 0, "cache_sizes must not be empty")
        need(all(1 <= m <= self.n_contents for m in self.cache_sizes), "every cache size must lie in [1, n_contents]")
        need(list(self.cache_sizes) == sorted(set(self.cache_sizes)), "cache_sizes must be strictly increasing")
        for name in ("lam", "fetch_cost", "ageing_cost", "request_rate"):
            v = getattr(self, name)
            need(v > 0 and math.isfinite(v), f"{name} must be finite and > 0")
        if self.series_key is None:
            need(not self.series_values, "series_values given without series_key")
        else:
            need(self.series_key in SERIES_KEYS, f"series_key must be one of {SERIES_KEYS}")
            need(len(self.series_values) > 0, "series_values must not be empty")
            need(all(v > 0 and math.isfinite(v) for v in self.series_values), "series values must be finite and > 0")
        need(len(self.policies) > 0, "at least one policy")
        for p in self.policies:
            need(p in POLICIES, f"unknown policy {p!r}; choose from {sorted(POLICIES)}")
        need(self.horizon > 0 and math.isfinite(self.horizon), "horizon must be finite and > 0")
        if self.warmup is not None:
            need(0 <= self.warmup < self.horizon, "need 0 <= warmup < horizon")
        need(self.replications >= 2, "replications must be >= 2")
        need(0 <= self.seed < 2**64, "seed must fit in an unsigned 64-bit integer")

    def points(self) -> list[tuple[float | None, int]]:
        series = self.series_values if self.series_key else (None,)
        return [(v, m) for v in series for m in self.cache_sizes]

    def params_at(self, series_value: float | None) -> dict[str, float]:
        params = {k: getattr(self, k) for k in SERIES_KEYS}
        if self.series_key is not None:
            params[self.series_key] = float(series_value)
        return params

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for k in ("cache_sizes", "series_values", "policies"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("cache_sizes", "series_values", "policies"):
            if k in d:
                d[k] = tuple(d[k])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")  # where results land does not change them
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- presets --------------------------------------------------------------------

_PAPER = dict(n_contents=1000, zipf_alpha=1.0, ageing_cost=0.1, request_rate=5.0, cache_sizes=(40, 50, 60, 70, 80, 90, 100), horizon=1e5, replications=10)
_DESK = dict(n_contents=100, zipf_alpha=1.0, ageing_cost=0.1, request_rate=5.0, cache_sizes=(4, 6, 8, 10), horizon=2e4, replications=10)

_FIGURES = {
    "fig3": dict(lam=0.01, fetch_cost=1.0, policies=("whittle", "popular")),
    "fig4a": dict(lam=2.0, fetch_cost=5.0, series_key="lam", series_values=(0.01, 2.0, 5.0), policies=("whittle",)),
    "fig4b": dict(lam=2.0, fetch_cost=5.0, policies=("whittle",)),
    "fig6": dict(lam=2.0, fetch_cost=1.0, series_key="fetch_cost", series_values=(1.0, 2.0, 5.0), policies=("whittle",)),
}

PRESETS = tuple(_FIGURES)


def preset(name: str, scale: str = "desk") -> ExperimentConfig:
    if name not in _FIGURES:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    if scale not in ("desk", "paper"):
        raise ConfigError(f"scale must be 'desk' or 'paper', got {scale!r}")
    base = _DESK if scale == "desk" else _PAPER
    return ExperimentConfig(name=f"{name}-{scale}", **{**base, **_FIGURES[name]})


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read a TOML config; keys are the ExperimentConfig field names.

    An optional ``preset``/``scale`` pair seeds the defaults before the other
    keys are applied.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    base = ExperimentConfig().to_dict()
    if "preset" in raw:
        base = preset(raw.pop("preset"), raw.pop("scale", "desk")).to_dict()
    elif "scale" in raw:
        raise ConfigError("'scale' needs a 'preset'")
    base.update(raw)
    return ExperimentConfig.from_dict(base)


def resolve_seed(cli_seed: int | None, config_seed: int, *, explicit_in_config: bool = False) -> int:
    """Flag beats config file beats the environment beats the preset default."""
    if cli_seed is not None:
        return cli_seed
    if explicit_in_config:
        return config_seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return config_seed


# -- sweep ----------------------------------------------------------------------

CSV_COLUMNS = (
    "experiment",
    "series_key",
    "series_value",
    "cache_size",
    "policy",
    "replications",
    "seed",
    "avg_cost_rate",
    "avg_cost_ci95",
    "fetch_cost_rate",
    "fetch_cost_ci95",
    "ageing_cost_rate",
    "ageing_cost_ci95",
    "hit_rate",
    "fetch_on_hit_rate",
    "lower_bound",
    "ch_opt",
    "config_hash",
)


@dataclass(frozen=True)
class SweepRow:
    experiment: str
    series_key: str
    series_value: float | None
    cache_size: int
    policy: str
    replications: int
    seed: int
    avg_cost_rate: float
    avg_cost_ci95: float
    fetch_cost_rate: float
    fetch_cost_ci95: float
    ageing_cost_rate: float
    ageing_cost_ci95: float
    hit_rate: float
    fetch_on_hit_rate: float
    lower_bound: float | None
    ch_opt: float | None
    config_hash: str


@dataclass(frozen=True)
class BoundRow:
    series_key: str
    series_value: float | None
    cache_size: int
    lower_bound: float
    ch_opt: float


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list[SweepRow]
    bounds: list[BoundRow]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "bounds": [dataclasses.asdict(b) for b in self.bounds],
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentReport":
        return cls(
            config=ExperimentConfig.from_dict(d["config"]),
            rows=[SweepRow(**r) for r in d["rows"]],
            bounds=[BoundRow(**b) for b in d["bounds"]],
            metadata=dict(d["metadata"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))

    def select(self, policy: str, series_value: float | None = None) -> list[SweepRow]:
        return [r for r in self.rows if r.policy == policy and r.series_value == series_value]


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(fmt(getattr(r, c)) for c in columns) + "\n")
    return buf.getvalue()


def _point_spec(cfg: ExperimentConfig, series_value, m: int, policy: str) -> RunSpec:
    params = cfg.params_at(series_value)
    catalog = build_catalog(cfg.n_contents, cfg.zipf_alpha, params["lam"], m, allow_full_cache=True)
    cost = CostModel(params["fetch_cost"], params["ageing_cost"], params["request_rate"])
    return RunSpec(catalog, cost, policy, cfg.horizon, cfg.warmup, cfg.random_init)


class SweepError(RuntimeError):
    pass


def _run_task(task) -> SimReport:
    spec, seed = task
    try:
        return spec.execute(seed)
    except Exception as exc:
        raise SweepError(
            f"policy {spec.policy!r} at M={spec.catalog.cache_capacity}, seed {seed}: {type(exc).__name__}: {exc}"
        ) from exc


def compute_bounds(cfg: ExperimentConfig) -> list[BoundRow]:
    out = []
    for v, m in cfg.points():
        params = cfg.params_at(v)
        catalog = build_catalog(cfg.n_contents, cfg.zipf_alpha, params["lam"], m, allow_full_cache=True)
        cost = CostModel(params["fetch_cost"], params["ageing_cost"], params["request_rate"])
        res = dual_lower_bound(catalog, cost)
        out.append(BoundRow(cfg.series_key or "", v, m, res.lower_bound, res.ch_opt))
    return out


def run_sweep(cfg: ExperimentConfig, *, jobs: int = 1, progress=None) -> ExperimentReport:
    """Every (sweep point, policy) over the same replication seeds (common random numbers)."""
    seeds = derive_seeds(cfg.seed, cfg.replications)
    tasks = []
    keys = []
    for v, m in cfg.points():
        for policy in cfg.policies:
            spec = _point_spec(cfg, v, m, policy)
            for s in seeds:
                tasks.append((spec, s))
                keys.append((v, m, policy))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_task, tasks, chunksize=1))
    else:
        reports = []
        for i, t in enumerate(tasks):
            reports.append(_run_task(t))
            if progress:
                progress(i + 1, len(tasks))

    bounds = compute_bounds(cfg) if cfg.lower_bound else []
    bound_at = {(b.series_value, b.cache_size): b for b in bounds}
    digest = cfg.digest()
    rows = []
    k = cfg.replications
    for i in range(0, len(reports), k):
        v, m, policy = keys[i]
        stats = summarize(reports[i : i + k])
        b = bound_at.get((v, m))
        rows.append(
            SweepRow(
                experiment=cfg.name,
                series_key=cfg.series_key or "",
                series_value=v,
                cache_size=m,
                policy=policy,
                replications=k,
                seed=cfg.seed,
                avg_cost_rate=stats["avg_cost_rate"].mean,
                avg_cost_ci95=stats["avg_cost_rate"].ci95,
                fetch_cost_rate=stats["fetch_cost_rate"].mean,
                fetch_cost_ci95=stats["fetch_cost_rate"].ci95,
                ageing_cost_rate=stats["ageing_cost_rate"].mean,
                ageing_cost_ci95=stats["ageing_cost_rate"].ci95,
                hit_rate=stats["hit_rate"].mean,
                fetch_on_hit_rate=stats["fetch_on_hit_rate"].mean,
                lower_bound=b.lower_bound if b else None,
                ch_opt=b.ch_opt if b else None,
                config_hash=digest,
            )
        )
    rows.sort(key=lambda r: (r.series_value if r.series_value is not None else -math.inf, r.cache_size, cfg.policies.index(r.policy)))
    meta = {"config_hash": digest, "version": __version__, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    return ExperimentReport(cfg, rows, bounds, meta)


BOUND_COLUMNS = ("series_key", "series_value", "cache_size", "lower_bound", "ch_opt")


def write_outputs(report: ExperimentReport, csv_path: str | os.PathLike, json_path: str | os.PathLike | None = None) -> None:
    """Write CSV (and JSON) through temporary files so a failure leaves no partial output."""
    pending = [(Path(csv_path), rows_to_csv(report.rows, CSV_COLUMNS))]
    if json_path is not None:
        pending.append((Path(json_path), report.to_json() + "\n"))
    for path, text in pending:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)


def write_svg(report: ExperimentReport, path: str | os.PathLike) -> None:
    """Average cost against cache size, one line per (policy, series value), plus the bound."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "fresh-rmab"
    cfg = report.config
    decompose = cfg.name.startswith("fig4b")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    series = cfg.series_values if cfg.series_key else (None,)
    for v in series:
        tag = "" if v is None else f" {cfg.series_key}={v:g}"
        for pol in cfg.policies:
            rows = report.select(pol, v)
            ms = [r.cache_size for r in rows]
            if decompose:
                ax.errorbar(ms, [r.fetch_cost_rate for r in rows], [r.fetch_cost_ci95 for r in rows], marker="o", label=f"{pol} fetch{tag}")
                ax.errorbar(ms, [r.ageing_cost_rate for r in rows], [r.ageing_cost_ci95 for r in rows], marker="s", label=f"{pol} ageing{tag}")
            else:
                ax.errorbar(ms, [r.avg_cost_rate for r in rows], [r.avg_cost_ci95 for r in rows], marker="o", label=f"{pol}{tag}")
        bounds = [b for b in report.bounds if b.series_value == v]
        if bounds and not decompose:
            ax.plot([b.cache_size for b in bounds], [b.lower_bound for b in bounds], "k--", lw=1, label=f"relaxed bound{tag}")
    ax.set_xlabel("cache size M")
    ax.set_ylabel("cost per unit time")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
