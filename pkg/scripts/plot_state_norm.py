#!/usr/bin/env python3
"""Plot ‖x_t‖ from one or more trajectory CSVs on a log scale.

    python3 scripts/plot_state_norm.py results/stochastic_seed0.csv results/dr_seed0.csv -o norm.png
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from mjls_dr.io import read_trajectory_csv  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--output", default="state_norm.png")
    args = ap.parse_args()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for path in args.csv:
        d = read_trajectory_csv(path)
        ax.semilogy(d["t"], d["xnorm"], label=Path(path).stem)
    ax.set_xlabel("t")
    ax.set_ylabel("‖x_t‖")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
