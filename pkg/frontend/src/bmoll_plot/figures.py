"""Figure builders for the benchmark artifact files.

Figure kinds:

* ``trace``          -- per-trial objective curves from trace.csv files.
* ``trace-ci``       -- mean curves with shaded 95% bands from aggregate.csv.
* ``front``          -- objective-space front overlays with the optimistic /
                        pessimistic markers from front_meta.json.
* ``solution-space`` -- objective contours over (x, y) with the swept
                        minimizer set overlaid (one-dimensional runs).
* ``panel``          -- trace + solution-space + front side by side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import (
    find_run_dirs,
    read_aggregate,
    read_front,
    read_json,
    read_pareto_set,
    read_surface,
    read_trace,
)

FIGURE_KINDS = ("trace", "trace-ci", "front", "solution-space", "panel")

#: Deterministic output: fixed hash salt for vector backends and a constant
#: metadata block for PNG.
plt.rcParams["svg.hashsalt"] = "bmoll-plot"
_PNG_METADATA = {"Software": "bmoll-plot"}

_ALGO_LABELS = {"opt": "optimistic", "rn": "risk-neutral", "ra": "risk-averse"}
_ALGO_COLORS = {"opt": "tab:blue", "rn": "tab:orange", "ra": "tab:green"}


@dataclass
class FigureSpec:
    """One figure request: kind, input directory, output path, labels."""

    kind: str
    in_dir: Path
    out_path: Path
    xaxis: str = "iter"
    title: str | None = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; expected {FIGURE_KINDS}")
        if self.xaxis not in ("iter", "time"):
            raise ValueError(f"xaxis must be 'iter' or 'time', got {self.xaxis!r}")
        self.in_dir = Path(self.in_dir)
        self.out_path = Path(self.out_path)


def _run_label(run_dir: Path, root: Path) -> str:
    rel = run_dir.relative_to(root) if run_dir != root else Path(run_dir.name)
    parts = [p for p in rel.parts if p]
    pretty = [_ALGO_LABELS.get(p, p) for p in parts]
    return "/".join(pretty) if pretty else run_dir.name


def _color_for(run_dir: Path):
    return _ALGO_COLORS.get(run_dir.name)


def _plot_trace(ax, spec: FigureSpec):
    runs = find_run_dirs(spec.in_dir)
    if not runs:
        raise FileNotFoundError(f"no run directories with traces under {spec.in_dir}")
    for run in runs:
        cols = read_trace(run / "trace.csv")
        label = _run_label(run, spec.in_dir)
        for i, trial in enumerate(np.unique(cols["trial"])):
            mask = cols["trial"] == trial
            x = cols["time_s"][mask] if spec.xaxis == "time" else cols["iter"][mask]
            ax.plot(
                x,
                cols["f_true"][mask],
                color=_color_for(run),
                alpha=0.9 if i == 0 else 0.35,
                label=label if i == 0 else None,
                linewidth=1.2,
            )
    ax.set_xlabel("time (s)" if spec.xaxis == "time" else "iteration")
    ax.set_ylabel(spec.labels.get("y", "true objective value"))
    ax.legend(fontsize=8)


def _plot_trace_ci(ax, spec: FigureSpec):
    runs = find_run_dirs(spec.in_dir)
    if not runs:
        raise FileNotFoundError(f"no aggregate.csv under {spec.in_dir}")
    for run in runs:
        agg = read_aggregate(run / "aggregate.csv")
        x = agg["t_mean"] if spec.xaxis == "time" else agg["iter"]
        label = _run_label(run, spec.in_dir)
        line, = ax.plot(x, agg["f_mean"], label=label, linewidth=1.4,
                        color=_color_for(run))
        ax.fill_between(x, agg["f_mean"] - agg["ci95"], agg["f_mean"] + agg["ci95"],
                        alpha=0.2, color=line.get_color())
    ax.set_xlabel("time (s)" if spec.xaxis == "time" else "iteration")
    ax.set_ylabel(spec.labels.get("y", "true objective value (mean, 95% band)"))
    ax.legend(fontsize=8)


def _front_runs(spec: FigureSpec):
    runs = [d for d in find_run_dirs(spec.in_dir) if (d / "front.csv").exists()]
    if not runs:
        raise FileNotFoundError(f"no front.csv under {spec.in_dir}")
    return runs


def _plot_front(ax, spec: FigureSpec):
    for run in _front_runs(spec):
        front = read_front(run / "front.csv")
        label = _run_label(run, spec.in_dir)
        order = np.argsort(front["f1"])
        ax.plot(front["f1"][order], front["f2"][order], label=label,
                linewidth=1.3, color=_color_for(run))
        meta_path = run / "front_meta.json"
        if meta_path.exists():
            meta = read_json(meta_path)
            if meta.get("mark") is not None:
                kind = meta.get("mark_kind") or "mark"
                marker = "*" if kind == "optimistic" else "D"
                ax.scatter([meta["mark"][0]], [meta["mark"][1]], marker=marker,
                           s=110 if marker == "*" else 50, zorder=5,
                           color="black", label=f"{kind} point")
    ax.set_xlabel(spec.labels.get("x", "first lower-level objective"))
    ax.set_ylabel(spec.labels.get("y", "second lower-level objective"))
    ax.legend(fontsize=8)


def _plot_solution_space(ax, spec: FigureSpec):
    runs = [d for d in find_run_dirs(spec.in_dir) if (d / "surface.csv").exists()]
    if not runs:
        raise FileNotFoundError(f"no surface.csv under {spec.in_dir}")
    surf = read_surface(runs[0] / "surface.csv")
    xs = np.unique(surf["x"])
    ys = np.unique(surf["y"])
    Z = surf["f_u"].reshape(xs.size, ys.size).T
    cs = ax.contour(xs, ys, Z, levels=25, linewidths=0.6, cmap="viridis")
    ax.clabel(cs, inline=True, fontsize=5, fmt="%.3g")
    for run in runs:
        meta = read_json(run / "front_meta.json")
        pset = read_pareto_set(run / "pareto_set.csv")
        x_star = meta["final_x"][0]
        label = _run_label(run, spec.in_dir)
        ax.plot(np.full(pset["y"].size, x_star), pset["y"], linewidth=2.2,
                label=f"minimizer set at {label} solution", color=_color_for(run))
        if meta.get("mark") is not None:
            pass
    ax.set_xlabel("upper-level variable")
    ax.set_ylabel("lower-level variable")
    ax.legend(fontsize=7)


_PANELS = (_plot_trace, _plot_solution_space, _plot_front)


def render(spec: FigureSpec) -> Path:
    """Render one figure and return the written path."""
    if spec.kind == "panel":
        fig, axes = plt.subplots(1, 3, figsize=(15, 4.2))
        for ax, panel in zip(axes, _PANELS):
            panel(ax, spec)
    else:
        fig, ax = plt.subplots(figsize=(6, 4.2))
        {
            "trace": _plot_trace,
            "trace-ci": _plot_trace_ci,
            "front": _plot_front,
            "solution-space": _plot_solution_space,
        }[spec.kind](ax, spec)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    kwargs = {}
    if spec.out_path.suffix.lower() == ".png":
        kwargs["metadata"] = dict(_PNG_METADATA)
    fig.savefig(spec.out_path, dpi=130, **kwargs)
    plt.close(fig)
    return spec.out_path
