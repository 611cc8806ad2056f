"""
Plot a run-length posterior heatmap with the series above it.

    python docs/examples/plot_run_length.py --series out/series.csv \
        --run-length out/rl.csv --trace out/trace.csv --out out/run_length.png
"""
import argparse

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def main():
    parser = argparse.ArgumentParser(description="Run-length posterior heatmap")
    parser.add_argument("--series", required=True, help="series CSV (first column)")
    parser.add_argument("--run-length", required=True, help="dense run-length CSV from --run-length-csv")
    parser.add_argument("--trace", help="trace CSV from --trace-csv; overlays the MAP run length")
    parser.add_argument("--out", default="run_length.png")
    args = parser.parse_args()

    values = pd.read_csv(args.series).iloc[:, 0].to_numpy()
    rl = pd.read_csv(args.run_length, index_col="t")
    # log scale, floored so empty bins stay visible
    mass = np.log10(np.clip(rl.to_numpy().T, 1e-12, None))

    fig, (top, bottom) = plt.subplots(2, 1, figsize=(10, 6), sharex=True, gridspec_kw={"height_ratios": [1, 2]})
    top.plot(np.arange(1, values.size + 1), values, lw=0.8, color="k")
    top.set_ylabel("x")
    bottom.imshow(mass, aspect="auto", origin="lower", cmap="gray_r",
                  extent=(0.5, rl.shape[0] + 0.5, -0.5, rl.shape[1] - 0.5))
    if args.trace:
        trace = pd.read_csv(args.trace)
        bottom.plot(trace["t"], trace["map_run_length"], color="tab:red", lw=0.8)
    bottom.set_xlabel("t")
    bottom.set_ylabel("run length")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"Saved {args.out}")


if __name__ == "__main__":
    main()
