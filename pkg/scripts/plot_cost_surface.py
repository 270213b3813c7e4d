#!/usr/bin/env python3
"""Plot a two-threshold cost surface CSV (from `splatlod search-thresholds
--surface`) as a heatmap, darker = cheaper."""

import argparse

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv")
    ap.add_argument("--out", default="cost_surface.png")
    args = ap.parse_args()

    rows = np.loadtxt(args.csv, delimiter=",", skiprows=1)
    d1s = np.unique(rows[:, 0])
    d2s = np.unique(rows[:, 1])
    grid = np.full((d1s.size, d2s.size), np.nan)
    for d1, d2, cost in rows:
        grid[np.searchsorted(d1s, d1), np.searchsorted(d2s, d2)] = cost

    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.pcolormesh(d2s, d1s, grid, shading="nearest", cmap="viridis_r")
    fig.colorbar(im, label="mean gaussians per tile")
    i, j = np.unravel_index(np.nanargmin(grid), grid.shape)
    ax.plot(d2s[j], d1s[i], "r*", markersize=14, label="minimum")
    ax.set_xlabel("second depth threshold")
    ax.set_ylabel("first depth threshold")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=130)
    print(f"wrote {args.out} (min {np.nanmin(grid):.2f} at "
          f"d1={d1s[i]:.2f}, d2={d2s[j]:.2f})")


if __name__ == "__main__":
    main()
