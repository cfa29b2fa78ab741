"""Single-content sanity run: simulated Whittle cost vs the renewal-reward value, plus the DP check."""

import argparse

from fresh_rmab.index import tau_star
from fresh_rmab.model import CostModel, build_catalog
from fresh_rmab.sim import RunSpec, replicate
from fresh_rmab.verify import diff_table, verify_case

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizon", type=float, default=1e5)
    ap.add_argument("--replications", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cost = CostModel(1.0, 1.0, 2.0)
    cat = build_catalog(1, 1.0, 1.0, 1, allow_full_cache=True)
    target = cost.beta * cost.c_a * 1.0 * tau_star(1.0, cost, 1.0)
    for policy in ("whittle", "always_fetch"):
        s = replicate(RunSpec(cat, cost, policy, args.horizon), args.replications, args.seed).stats["avg_cost_rate"]
        print(f"{policy:<13s} {s.mean:.6f} +- {s.ci95:.6f}")
    print(f"renewal value {target:.6f}, fetch-every-time value {cost.beta * cost.c_f:.6f}")
    print(diff_table([verify_case(0.5, cost, 1.0, ch) for ch in (0.0, 0.2, 1.0)]))
