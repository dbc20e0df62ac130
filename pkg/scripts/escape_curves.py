#!/usr/bin/env python3
"""Cluster escape probability against intensity for both badness notions.

For each intensity, estimates the probability that the bad cluster grown
from the origin cell reaches the window boundary, once with the ancestry
notion (the machinery's default) and once with the raw detection notion.
The detect curve must sit below the ancestry curve pointwise.
"""

import argparse
import csv
import os
import warnings

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from stsim.indicators import escape_probability
from stsim.tessellation import IndexWindow, ScaleParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lams", type=float, nargs="+",
                    default=[0.5, 1.0, 2.0, 4.0, 8.0])
    ap.add_argument("--window-i", type=int, default=3)
    ap.add_argument("--window-tau", type=int, default=3)
    ap.add_argument("--replicas", type=int, default=80)
    ap.add_argument("--s", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="stsim-escape-curves")
    args = ap.parse_args()

    with warnings.catch_warnings():
        # the desk-scale family sits below the advisory floors on purpose
        warnings.simplefilter("ignore", UserWarning)
        p = ScaleParams(d=1, ell=1.0, eps=0.5, eta=1, m=7, lam=max(args.lams),
                        r=1.0, kappa=2, c_mix=0.5)
    win = IndexWindow((-args.window_i,), (args.window_i,), 0, args.window_tau)

    rows = []
    for badness in ("ancestry", "detect"):
        for lam in args.lams:
            est = escape_probability(p, win, args.replicas, seed=args.seed,
                                     s=args.s, lam=lam, badness=badness)
            rows.append((badness, lam, est.value, est.ci_low, est.ci_high))
            print(f"{badness:<9} lam={lam:<6g} escape={est.value:.3f} "
                  f"[{est.ci_low:.3f}, {est.ci_high:.3f}]")

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "escape.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["badness", "lam", "escape", "ci_low", "ci_high"])
        w.writerows(rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    for badness, color in (("ancestry", "C0"), ("detect", "C1")):
        pts = [r for r in rows if r[0] == badness]
        # whiskers clamped at 0: the interval endpoints can sit on the
        # estimate itself up to float rounding
        lo = [max(0.0, r[2] - r[3]) for r in pts]
        hi = [max(0.0, r[4] - r[2]) for r in pts]
        ax.errorbar([r[1] for r in pts], [r[2] for r in pts], yerr=[lo, hi],
                    fmt="o-", color=color, capsize=3, label=badness)
    ax.set_xscale("log")
    ax.set_xlabel("intensity")
    ax.set_ylabel("escape probability")
    ax.set_title(f"window +-{args.window_i} x [0, {args.window_tau}], "
                 f"{args.replicas} replicas")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(os.path.join(args.out, "escape.png"), dpi=150)
    print(f"artifacts in {args.out}/")


if __name__ == "__main__":
    main()
