"""Effect of the update rate on cost (fig4a) and the fetch / ageing split at lam = 2 (fig4b)."""

from _common import parser, sweep

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    rep = sweep("fig4a", args)
    for lam in rep.config.series_values:
        costs = "  ".join(f"M={r.cache_size}: {r.avg_cost_rate:.4f}" for r in rep.select("whittle", lam))
        print(f"lam={lam:<5g} {costs}")
    rep = sweep("fig4b", args)
    print(f"{'M':>4} {'fetch':>10} {'ageing':>10}")
    for r in rep.select("whittle"):
        print(f"{r.cache_size:4d} {r.fetch_cost_rate:10.4f} {r.ageing_cost_rate:10.4f}")
