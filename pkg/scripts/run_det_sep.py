#!/usr/bin/env python3
"""Deterministic separable experiments: three problems x three algorithms at
dimension 1 with Armijo line searches, plus front sweeps at the final
iterates.  Writes all artifacts under --out."""

import argparse

from bmoll.harness import suite_det_sep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/det_sep")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iters", type=int, default=200)
    args = ap.parse_args()
    results = suite_det_sep(args.out, seed=args.seed, iterations=args.iters)
    for (problem, algo), res in sorted(results.items()):
        print(f"{problem:10s} {algo:3s} final {res.aggregate.f_mean[-1]:+.6f}")
    print(f"artifacts under {args.out}")


if __name__ == "__main__":
    main()
