"""bmoll-plot: render benchmark figures from harness CSV/JSON outputs.

Exit codes: 0 success, 1 usage error, 2 input/schema error.
"""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, FigureSpec, render
from .io import SchemaError


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bmoll-plot",
        description="Render figures from bmoll benchmark output directories.",
    )
    ap.add_argument("kind", choices=FIGURE_KINDS)
    ap.add_argument("--in", dest="in_dir", required=True,
                    help="run directory (or parent of several run directories)")
    ap.add_argument("--out", dest="out_path", required=True,
                    help="output image path (.png or .svg)")
    ap.add_argument("--xaxis", choices=("iter", "time"), default="iter")
    ap.add_argument("--title", default=None)
    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    spec = FigureSpec(
        kind=args.kind, in_dir=args.in_dir, out_path=args.out_path,
        xaxis=args.xaxis, title=args.title,
    )
    try:
        path = render(spec)
    except SchemaError as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
