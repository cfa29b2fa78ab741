"""Average cost against cache size: Whittle policy, popularity baseline and the relaxed bound."""

from _common import parser, sweep

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    rep = sweep("fig3", args)
    print(f"{'M':>4} {'whittle':>18} {'popular':>18} {'bound':>10} {'gap %':>7}")
    for w, b in zip(rep.select("whittle"), rep.select("popular")):
        gap = 100 * (w.avg_cost_rate - w.lower_bound) / w.lower_bound
        print(
            f"{w.cache_size:4d} {w.avg_cost_rate:9.5f}+-{w.avg_cost_ci95:.5f} "
            f"{b.avg_cost_rate:9.5f}+-{b.avg_cost_ci95:.5f} {w.lower_bound:10.5f} {gap:7.2f}"
        )
