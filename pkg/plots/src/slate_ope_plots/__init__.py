"""Figure rendering for slate-ope experiment results."""

__version__ = "0.1.0"

from .figures import (
    FIGURE_KINDS,
    FigureRequest,
    RenderResult,
    SchemaError,
    fit_line,
    load_results,
    render,
)

__all__ = [
    "FIGURE_KINDS",
    "FigureRequest",
    "RenderResult",
    "SchemaError",
    "fit_line",
    "load_results",
    "render",
]
