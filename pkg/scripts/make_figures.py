#!/usr/bin/env python3
"""Render the standard figures from previously generated suite outputs.

Requires the bmoll-plot package (see frontend/).  Expects the directory
layout produced by scripts/run_det_sep.py and scripts/run_noise_suite.py.
"""

import argparse
import subprocess
import sys
from pathlib import Path


def render(kind, in_dir, out_path, extra=()):
    cmd = ["bmoll-plot", kind, "--in", str(in_dir), "--out", str(out_path), *extra]
    print(" ".join(cmd))
    return subprocess.call(cmd)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--det", default="results/det_sep",
                    help="output directory of run_det_sep.py")
    ap.add_argument("--stoch", default="results/stoch_nonsep",
                    help="output directory of run_noise_suite.py")
    ap.add_argument("--out", default="results/figures")
    args = ap.parse_args()
    out = Path(args.out)
    rc = 0
    det = Path(args.det)
    if det.exists():
        for problem_dir in sorted(p for p in det.iterdir() if p.is_dir()):
            rc |= render("panel", problem_dir, out / f"{problem_dir.name}_panel.png")
    stoch = Path(args.stoch)
    if stoch.exists():
        for algo_dir in sorted(p for p in stoch.iterdir() if p.is_dir()):
            rc |= render("trace-ci", algo_dir, out / f"stoch_{algo_dir.name}_ci.png")
    sys.exit(rc)


if __name__ == "__main__":
    main()
