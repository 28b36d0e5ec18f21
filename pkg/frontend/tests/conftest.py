import csv
import json
from pathlib import Path

import numpy as np
import pytest


def write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def make_run_dir(root: Path, algo: str, n_trials: int = 2, n_iter: int = 12,
                 offset: float = 0.0, mark_kind=None):
    """Fabricate one run directory matching the documented artifact schemas."""
    run = root / algo
    gen = np.random.default_rng(hash(algo) % 2**32)
    trace_rows = []
    agg_rows = []
    for k in range(n_iter):
        vals = []
        for t in range(n_trials):
            v = offset + np.exp(-0.3 * k) * (1.0 + 0.05 * t) + 0.01 * gen.standard_normal()
            trace_rows.append((k, 0.01 * k, repr(float(v)), t))
            vals.append(v)
        vals = np.asarray(vals)
        ci = 1.96 * vals.std(ddof=1) / np.sqrt(n_trials) if n_trials > 1 else 0.0
        agg_rows.append((k, repr(float(vals.mean())), repr(float(ci)),
                         repr(0.01 * k), n_trials))
    write_csv(run / "trace.csv", ("iter", "time_s", "f_true", "trial"), trace_rows)
    write_csv(run / "aggregate.csv", ("iter", "f_mean", "ci95", "t_mean", "n_trials"),
              agg_rows)
    lam1 = np.linspace(0, 1, 30)
    f1 = (1 - lam1) ** 2 * (2 + offset)
    f2 = lam1**2 * (2 + offset)
    write_csv(run / "front.csv", ("lambda1", "f1", "f2"),
              [(repr(float(a)), repr(float(b)), repr(float(c)))
               for a, b, c in zip(lam1, f1, f2)])
    meta = {
        "problem": "demo",
        "algo": algo,
        "final_x": [-1.0 - offset],
        "final_lambda": [0.5, 0.5] if mark_kind == "optimistic" else None,
        "mark_kind": mark_kind,
        "mark": [float(f1[0]), float(f2[0])] if mark_kind else None,
        "skipped_weights": [],
    }
    (run / "front_meta.json").write_text(json.dumps(meta))
    xs = np.linspace(-3, 1, 24)
    ys = np.linspace(-2, 3, 20)
    rows = []
    for xv in xs:
        for yv in ys:
            rows.append((repr(float(xv)), repr(float(yv)),
                         repr(float(xv * yv + 0.5 * xv * xv))))
    write_csv(run / "surface.csv", ("x", "y", "f_u"), rows)
    write_csv(run / "pareto_set.csv", ("lambda1", "y"),
              [(repr(float(a)), repr(float(2 * a - 1))) for a in lam1])
    return run


@pytest.fixture
def demo_suite(tmp_path):
    root = tmp_path / "suite"
    make_run_dir(root, "opt", mark_kind="optimistic")
    make_run_dir(root, "rn", offset=0.3)
    make_run_dir(root, "ra", offset=0.6, mark_kind="pessimistic")
    return root
