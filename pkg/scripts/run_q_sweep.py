#!/usr/bin/env python3
"""Mini-batch size sweep for the risk-neutral driver on the non-separable
instance: N = 500 with Q in {10, 20, 40, 500}, aggregated over seeds."""

import argparse

import numpy as np

from bmoll.harness import suite_q_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/q_sweep")
    ap.add_argument("--seed", type=int, default=16)
    ap.add_argument("--nbar", type=int, default=10)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--iters", type=int, default=100)
    args = ap.parse_args()
    results = suite_q_sweep(args.out, seed=args.seed, n_bar=args.nbar,
                            trials=args.trials, iterations=args.iters)
    finals = {Q: float(r.aggregate.trial_finals.mean()) for Q, r in results.items()}
    vals = np.array(list(finals.values()))
    for Q, v in finals.items():
        print(f"Q={Q:4d}  mean final {v:+.6f}")
    print(f"relative spread {float((vals.max() - vals.min()) / abs(vals.mean())):.2e}")


if __name__ == "__main__":
    main()
