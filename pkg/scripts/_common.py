"""Shared argument handling for the figure scripts."""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from fresh_rmab.experiments import preset, resolve_seed, run_sweep, write_outputs, write_svg


def parser(desc):
    ap = argparse.ArgumentParser(description=desc)
    ap.add_argument("--scale", choices=("desk", "paper"), default="desk")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--svg", action="store_true")
    return ap


def sweep(name, args):
    cfg = preset(name, args.scale)
    cfg = replace(cfg, seed=resolve_seed(args.seed, cfg.seed), output_dir=args.out_dir)
    print(f"running {cfg.name} ({len(cfg.points())} points, {cfg.replications} replications)", file=sys.stderr)
    report = run_sweep(cfg, jobs=args.jobs)
    out = Path(cfg.output_dir)
    write_outputs(report, out / f"{cfg.name}.csv", out / f"{cfg.name}.json")
    if args.svg:
        write_svg(report, out / f"{cfg.name}.svg")
    return report
