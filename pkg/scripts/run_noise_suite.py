#!/usr/bin/env python3
"""Stochastic experiments: Gaussian oracle noise at three magnitudes with the
fixed stepsizes (0.1 upper level, 1.0 risk-neutral, 0.001 lower level),
aggregated over ten seeded trials with 95% confidence half-widths."""

import argparse

from bmoll.harness import STOCH_SIGMAS, suite_stoch_nonsep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/stoch_nonsep")
    ap.add_argument("--seed", type=int, default=16)
    ap.add_argument("--nbar", type=int, default=10)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--iters", type=int, default=150)
    args = ap.parse_args()
    results = suite_stoch_nonsep(args.out, seed=args.seed, n_bar=args.nbar,
                                 trials=args.trials, iterations=args.iters)
    for algo in ("opt", "rn", "ra"):
        cells = []
        for sg, sh in STOCH_SIGMAS:
            agg = results[(algo, sg, sh)].aggregate
            cells.append(f"({sg:g},{sh:g}): {agg.f_mean[-1]:.5g} +- {agg.ci95[-1]:.3g}")
        print(f"{algo:3s}  " + "  ".join(cells))


if __name__ == "__main__":
    main()
