#!/usr/bin/env python3
"""Log-log plot of a `hypergs bench` CSV: time and working memory vs. n.

usage: plot_bench.py bench.csv [out.png]
"""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main(argv):
    if len(argv) < 2:
        sys.exit(__doc__)
    src = argv[1]
    dst = argv[2] if len(argv) > 2 else src.rsplit(".", 1)[0] + ".png"
    df = pd.read_csv(src)
    fig, (ax_t, ax_m) = plt.subplots(1, 2, figsize=(10, 4))
    for method, g in df.groupby("method", sort=False):
        g = g.sort_values("n")
        ax_t.errorbar(g["n"], g["time_ms"], yerr=g["std_ms"], marker="o", capsize=3, label=method)
        ax_m.plot(g["n"], g["mem_bytes"] / 2**20, marker="o", label=method)
    for ax, label in ((ax_t, "time per pass [ms]"), (ax_m, "working memory [MiB]")):
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("latent dimension n")
        ax.set_ylabel(label)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
    fig.suptitle(f"G = {df['G'].iloc[0]}, forward + backward")
    fig.tight_layout()
    fig.savefig(dst, dpi=150)
    print(dst)


if __name__ == "__main__":
    main(sys.argv)
