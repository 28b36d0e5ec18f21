"""Readers for the benchmark harness file formats.

Schemas (one header row, comma separated):

* trace.csv      -- iter,time_s,f_true,trial
* aggregate.csv  -- iter,f_mean,ci95,t_mean,n_trials
* front.csv      -- lambda1,f1,f2
* surface.csv    -- x,y,f_u
* pareto_set.csv -- lambda1,y
* front_meta.json / manifest.json -- run metadata
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

TRACE_COLUMNS = ("iter", "time_s", "f_true", "trial")
AGGREGATE_COLUMNS = ("iter", "f_mean", "ci95", "t_mean", "n_trials")
FRONT_COLUMNS = ("lambda1", "f1", "f2")
SURFACE_COLUMNS = ("x", "y", "f_u")
PARETO_SET_COLUMNS = ("lambda1", "y")


class SchemaError(ValueError):
    """A CSV file does not match its documented schema."""

    def __init__(self, path, column, detail="missing or misplaced column"):
        self.column = column
        super().__init__(f"{path}: {detail}: {column!r}")


def _read_columns(path, expected) -> dict:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(path, expected[0], "empty file, expected header with")
        for col in expected:
            if col not in header:
                raise SchemaError(path, col)
        idx = [header.index(c) for c in expected]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(row[i]) for i in idx])
            except (ValueError, IndexError):
                raise SchemaError(path, expected[0],
                                  f"unparsable row {lineno} under columns")
    data = np.asarray(rows, dtype=float).reshape(-1, len(expected))
    return {c: data[:, k] for k, c in enumerate(expected)}


def read_trace(path) -> dict:
    cols = _read_columns(path, TRACE_COLUMNS)
    cols["iter"] = cols["iter"].astype(int)
    cols["trial"] = cols["trial"].astype(int)
    return cols


def read_aggregate(path) -> dict:
    cols = _read_columns(path, AGGREGATE_COLUMNS)
    cols["iter"] = cols["iter"].astype(int)
    return cols


def read_front(path) -> dict:
    return _read_columns(path, FRONT_COLUMNS)


def read_surface(path) -> dict:
    return _read_columns(path, SURFACE_COLUMNS)


def read_pareto_set(path) -> dict:
    return _read_columns(path, PARETO_SET_COLUMNS)


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def find_run_dirs(root) -> list:
    """Run directories under ``root`` (including root itself) that hold an
    aggregate.csv, sorted for deterministic figure layouts."""
    root = Path(root)
    hits = sorted(p.parent for p in root.rglob("aggregate.csv"))
    return hits
