"""Effect of the fetching cost on the Whittle policy's average cost."""

from _common import parser, sweep

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    rep = sweep("fig6", args)
    for cf in rep.config.series_values:
        costs = "  ".join(f"M={r.cache_size}: {r.avg_cost_rate:.4f}" for r in rep.select("whittle", cf))
        print(f"c_f={cf:<3g} {costs}")
