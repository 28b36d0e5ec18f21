"""Figure rendering for bmoll benchmark outputs.

Consumes only the documented CSV/JSON artifact files; no in-process coupling
to the solver package.
"""

from .figures import FIGURE_KINDS, FigureSpec, render
from .io import (
    SchemaError,
    read_aggregate,
    read_front,
    read_json,
    read_pareto_set,
    read_surface,
    read_trace,
)

__version__ = "0.1.0"

__all__ = [
    "FIGURE_KINDS",
    "FigureSpec",
    "SchemaError",
    "read_aggregate",
    "read_front",
    "read_json",
    "read_pareto_set",
    "read_surface",
    "read_trace",
    "render",
]
