"""Command-line front end: ``fresh-rmab {index,sweep,lb,rvi,sim}``.

Exit codes: 0 success, 1 usage or config error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dp import StructureError
from .experiments import (
    BOUND_COLUMNS,
    PRESETS,
    ConfigError,
    ExperimentConfig,
    compute_bounds,
    load_config,
    preset,
    resolve_seed,
    rows_to_csv,
    run_sweep,
    write_outputs,
    write_svg,
    fmt,
    tomllib,
)
from .index import index_cap, relaxed_value, tau_star, tau_zero, thresholds
from .model import CostModel, build_catalog
from .sim import RunSpec, replicate
from .verify import diff_table, verify_case

INDEX_COLUMNS = ("ch", "tau_bar", "tau_tilde", "tau_star", "tau_zero", "theta")
EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_content_args(p: argparse.ArgumentParser, lam_default: float = 1.0) -> None:
    p.add_argument("--p", type=float, default=0.5, help="request probability of the content")
    p.add_argument("--lam", type=float, default=lam_default, help="update rate")
    p.add_argument("--fetch-cost", type=float, default=1.0)
    p.add_argument("--ageing-cost", type=float, default=1.0)
    p.add_argument("--request-rate", type=float, default=2.0)


def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--seed", type=_u64, default=None, help="master seed (falls back to $FRESH_RMAB_SEED)")
    p.add_argument("--out-dir", help="override the config's output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fresh-rmab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("index", help="thresholds and relaxed cost over a holding-cost grid")
    _add_content_args(p)
    p.add_argument("--points", type=_positive_int, default=11, help="grid points on [0, I]")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("sweep", help="simulate a preset or config over its sweep points")
    _add_experiment_args(p)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")
    p.add_argument("--horizon", type=float, help="override the simulated horizon")
    p.add_argument("--replications", type=int, help="override the replication count")

    p = sub.add_parser("lb", help="relaxed lower bound and optimal holding cost per sweep point")
    _add_experiment_args(p)

    p = sub.add_parser("rvi", help="check closed forms against relative value iteration")
    _add_content_args(p)
    p.add_argument("--ch", type=float, action="append", help="holding cost(s); default 0, I/2 and 1.5 I")
    p.add_argument("--points-per-tau-zero", type=_positive_int, default=2000)
    p.add_argument("--scheme", choices=("linear", "cell"), default="linear")
    p.add_argument("--tol", type=float, default=0.02, help="relative tolerance on theta")

    p = sub.add_parser("sim", help="replicate one policy on one catalog")
    p.add_argument("--policy", default="whittle")
    p.add_argument("--n", type=_positive_int, default=100, help="catalog size")
    p.add_argument("--m", type=_positive_int, default=10, help="cache size")
    p.add_argument("--alpha", type=float, default=1.0, help="Zipf exponent")
    p.add_argument("--lam", type=float, default=0.01)
    p.add_argument("--fetch-cost", type=float, default=1.0)
    p.add_argument("--ageing-cost", type=float, default=0.1)
    p.add_argument("--request-rate", type=float, default=5.0)
    p.add_argument("--horizon", type=float, default=2e4)
    p.add_argument("--warmup", type=float, default=None)
    p.add_argument("--replications", type=int, default=10)
    p.add_argument("--seed", type=_u64, default=None)
    p.add_argument("--jobs", type=_positive_int, default=1)
    return ap


def _cost(args) -> CostModel:
    try:
        return CostModel(args.fetch_cost, args.ageing_cost, args.request_rate)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _experiment(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    explicit_seed = False
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset, args.scale)
    else:
        raise ConfigError("need --config or --preset")
    if args.config:
        explicit_seed = _config_sets_seed(args.config)
    updates = {"seed": resolve_seed(args.seed, cfg.seed, explicit_in_config=explicit_seed)}
    if args.out_dir:
        updates["output_dir"] = args.out_dir
    for key in ("horizon", "replications"):
        if getattr(args, key, None) is not None:
            updates[key] = getattr(args, key)
    return replace(cfg, **updates)


def _config_sets_seed(path) -> bool:
    with open(path, "rb") as fh:
        return "seed" in tomllib.load(fh)


def cmd_index(args) -> int:
    cost = _cost(args)
    if not 0 < args.p <= 1 or not (args.lam >= 0 and math.isfinite(args.lam)):
        raise ConfigError("need 0 < p <= 1 and a finite lam >= 0")
    cap = index_cap(args.p, cost, args.lam)
    t0, ts0 = tau_zero(cost, args.lam), tau_star(args.p, cost, args.lam)
    grid = np.linspace(0.0, cap, args.points) if args.points > 1 else np.array([cap])
    grid[-1] = cap
    lines = [",".join(INDEX_COLUMNS)]
    for ch in grid:
        ch = float(ch)
        ts = thresholds(ch, args.p, cost, args.lam)
        theta = relaxed_value(ch, args.p, cost, args.lam).theta
        lines.append(",".join(fmt(float(v)) for v in (ch, ts.tau_bar, ts.tau_tilde, ts.tau_star, ts.tau_zero, theta)))
    text = "\n".join(lines) + "\n"
    summary = f"# tau_zero={fmt(t0)} tau_star={fmt(ts0)} index_cap={fmt(cap)}"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(summary)
    else:
        print(summary, file=sys.stderr)
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _experiment(args)
    out = Path(cfg.output_dir)
    print(f"{cfg.name}: {len(cfg.points())} points x {len(cfg.policies)} policies x {cfg.replications} replications, seed {cfg.seed}", file=sys.stderr)
    try:
        report = run_sweep(cfg, jobs=args.jobs)
    except Exception as exc:  # abort without touching the outputs
        print(f"sweep {cfg.name} failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    csv_path = out / f"{cfg.name}.csv"
    write_outputs(report, csv_path, out / f"{cfg.name}.json")
    if args.svg:
        write_svg(report, out / f"{cfg.name}.svg")
    for r in report.rows:
        tag = "" if r.series_value is None else f"{r.series_key}={r.series_value:g} "
        lb = "" if r.lower_bound is None else f"  bound {r.lower_bound:.6f}"
        print(f"{tag}M={r.cache_size:<4d} {r.policy:<8s} cost {r.avg_cost_rate:.6f} +/- {r.avg_cost_ci95:.6f}{lb}")
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_lb(args) -> int:
    cfg = _experiment(args)
    bounds = compute_bounds(cfg)
    text = rows_to_csv(bounds, BOUND_COLUMNS)
    path = Path(cfg.output_dir) / f"{cfg.name}-lb.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_rvi(args) -> int:
    cost = _cost(args)
    if not 0 < args.p <= 1 or not (args.lam >= 0 and math.isfinite(args.lam)):
        raise ConfigError("need 0 < p <= 1 and a finite lam >= 0")
    cap = index_cap(args.p, cost, args.lam)
    chs = args.ch if args.ch else [0.0, 0.5 * cap, 1.5 * cap]
    if any(c < 0 for c in chs):
        raise ConfigError("holding costs must be >= 0")
    results = []
    try:
        for ch in chs:
            results.append(
                verify_case(args.p, cost, args.lam, ch, points_per_tau_zero=args.points_per_tau_zero, scheme=args.scheme, theta_rtol=args.tol)
            )
    except StructureError as exc:
        print(f"oracle policy is not of threshold type: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    print(diff_table(results))
    if all(r.ok for r in results):
        print("all checks passed")
        return EXIT_OK
    print("verification FAILED", file=sys.stderr)
    return EXIT_VERIFY


def cmd_sim(args) -> int:
    try:
        catalog = build_catalog(args.n, args.alpha, args.lam, args.m, allow_full_cache=True)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cost = _cost(args)
    seed = resolve_seed(args.seed, 0)
    spec = RunSpec(catalog, cost, args.policy, args.horizon, args.warmup)
    try:
        rep = replicate(spec, args.replications, seed, jobs=args.jobs)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    out = {name: {"mean": s.mean, "ci95": s.ci95} for name, s in rep.stats.items()}
    out["seed"] = seed
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"index": cmd_index, "sweep": cmd_sweep, "lb": cmd_lb, "rvi": cmd_rvi, "sim": cmd_sim}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fresh-rmab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        print(f"fresh-rmab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
