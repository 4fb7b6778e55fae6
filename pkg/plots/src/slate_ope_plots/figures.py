"""Render the four figure families from slate-ope results CSV files.

The CSV schema is the one documented by the slate-ope CLI: one row per
(tensor, estimator) with delta_nmse, nmse, predicted_improvement, priors,
and geometry columns. Rendering never mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib.colors import TwoSlopeNorm

FIGURE_KINDS = ("prior_grid", "cardinality_grid", "slot_sweep", "regression")

# Tensor-level fields are repeated on every estimator row; reading them off
# the PI rows avoids triple counting.
_BASE_COLUMNS = ("experiment", "K", "cardinalities", "tensor_index", "estimator", "n")
_REQUIRED_COLUMNS = {
    "prior_grid": _BASE_COLUMNS + ("delta_nmse", "p_bar", "p_prime"),
    "cardinality_grid": _BASE_COLUMNS + ("delta_nmse", "nmse"),
    "slot_sweep": _BASE_COLUMNS + ("delta_nmse", "nmse"),
    "regression": _BASE_COLUMNS + ("delta_nmse", "predicted_improvement"),
}


class SchemaError(ValueError):
    """The CSV does not carry the columns a figure kind needs."""


@dataclass(frozen=True)
class FigureRequest:
    figure_kind: str
    csv_path: str
    output_image_path: str
    log_scale: bool = False


@dataclass(frozen=True)
class RenderResult:
    """Where the image went plus the numbers drawn onto it."""

    output_path: str
    annotations: dict


def load_results(csv_path, figure_kind: str) -> pd.DataFrame:
    if figure_kind not in FIGURE_KINDS:
        raise ValueError(f"unknown figure kind {figure_kind!r}; choose from {FIGURE_KINDS}")
    frame = pd.read_csv(csv_path)
    for column in _REQUIRED_COLUMNS[figure_kind]:
        if column not in frame.columns:
            raise SchemaError(f"results CSV is missing required column {column!r}")
    if frame.empty:
        raise ValueError(f"results CSV {csv_path} has no data rows")
    return frame


def fit_line(x, y) -> tuple[float, float, float]:
    """Slope, intercept, and R^2 of a least-squares line.

    Deliberately self-contained: the displayed R^2 must reproduce the
    harness's value without sharing code with it.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points to fit a line")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    sxy = float(np.dot(dx, dy))
    if sxx == 0.0:
        return 0.0, float(y.mean()), 1.0 if syy == 0.0 else 0.0
    slope = sxy / sxx
    intercept = float(y.mean()) - slope * float(x.mean())
    r_squared = 1.0 if syy == 0.0 else (sxy * sxy) / (sxx * syy)
    return slope, intercept, r_squared


def _pi_rows(frame: pd.DataFrame) -> pd.DataFrame:
    rows = frame[frame["estimator"] == "pi"]
    if rows.empty:
        raise ValueError("results CSV has no 'pi' estimator rows")
    return rows


def _diverging_mesh(ax, matrix, x_labels, y_labels, value_fmt):
    finite = matrix[np.isfinite(matrix)]
    spread = float(np.max(np.abs(finite))) if finite.size else 0.0
    spread = max(spread, 1e-12)
    norm = TwoSlopeNorm(vcenter=0.0, vmin=-spread, vmax=spread)
    mesh = ax.pcolormesh(matrix, cmap="RdBu_r", norm=norm, edgecolors="white")
    ax.set_xticks(np.arange(len(x_labels)) + 0.5, [str(v) for v in x_labels])
    ax.set_yticks(np.arange(len(y_labels)) + 0.5, [str(v) for v in y_labels])
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            if np.isfinite(matrix[i, j]):
                ax.text(
                    j + 0.5, i + 0.5, value_fmt.format(matrix[i, j]),
                    ha="center", va="center", fontsize=8,
                )
    return mesh


def _render_prior_grid(frame: pd.DataFrame, request: FigureRequest):
    rows = _pi_rows(frame)
    table = rows.groupby(["p_bar", "p_prime"])["delta_nmse"].mean().unstack("p_prime")
    matrix = table.to_numpy()
    fig, ax = plt.subplots(figsize=(7, 5.5))
    mesh = _diverging_mesh(
        ax, matrix, table.columns.tolist(), table.index.tolist(), "{:.3g}"
    )
    fig.colorbar(mesh, ax=ax, label="mean delta_nmse")
    ax.set_xlabel("assumed prior mean")
    ax.set_ylabel("true prior mean")
    ax.set_title("Risk improvement of PI++ across prior means")
    annotations = {
        "cells": {
            f"{pb:g},{pp:g}": float(table.loc[pb, pp])
            for pb in table.index
            for pp in table.columns
            if np.isfinite(table.loc[pb, pp])
        }
    }
    return fig, annotations


def _render_cardinality_grid(frame: pd.DataFrame, request: FigureRequest):
    rows = _pi_rows(frame).copy()
    cards = rows["cardinalities"].astype(str).str.split("-", expand=True)
    if cards.shape[1] != 2:
        raise ValueError("cardinality grid figures need two-slot slates")
    rows["d_first"] = cards[0].astype(int)
    rows["d_second"] = cards[1].astype(int)
    rows["percent_improvement"] = np.where(
        rows["nmse"] > 0.0, 100.0 * rows["delta_nmse"] / rows["nmse"], 0.0
    )
    table = (
        rows.groupby(["d_first", "d_second"])["percent_improvement"].mean().unstack("d_second")
    )
    matrix = table.to_numpy()
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    mesh = _diverging_mesh(
        ax, matrix, table.columns.tolist(), table.index.tolist(), "{:.2f}"
    )
    fig.colorbar(mesh, ax=ax, label="mean percent improvement over PI")
    ax.set_xlabel("second-slot actions")
    ax.set_ylabel("first-slot actions")
    ax.set_title("Relative risk improvement by slot sizes")
    annotations = {
        "cells": {
            f"{a}x{b}": float(table.loc[a, b])
            for a in table.index
            for b in table.columns
            if np.isfinite(table.loc[a, b])
        }
    }
    return fig, annotations


def _render_slot_sweep(frame: pd.DataFrame, request: FigureRequest):
    rows = _pi_rows(frame).copy()
    rows["percent_improvement"] = np.where(
        rows["nmse"] > 0.0, 100.0 * rows["delta_nmse"] / rows["nmse"], 0.0
    )
    fig, (ax_abs, ax_rel) = plt.subplots(1, 2, figsize=(11, 4.5))
    annotations = {"delta_by_k": {}, "percent_by_k": {}}
    for n_value, group in rows.groupby("n"):
        means = group.groupby("K")[["delta_nmse", "percent_improvement"]].mean()
        label = f"N={int(n_value):,}"
        ax_abs.plot(means.index, means["delta_nmse"], marker="o", label=label)
        ax_rel.plot(means.index, means["percent_improvement"], marker="s", label=label)
        for k, row in means.iterrows():
            annotations["delta_by_k"][f"{int(n_value)}:{int(k)}"] = float(row["delta_nmse"])
            annotations["percent_by_k"][f"{int(n_value)}:{int(k)}"] = float(
                row["percent_improvement"]
            )
    for ax, ylabel in ((ax_abs, "mean delta_nmse"), (ax_rel, "mean percent improvement")):
        ax.set_xlabel("slots per slate")
        ax.set_ylabel(ylabel)
        ax.legend()
        if request.log_scale:
            ax.set_yscale("log")
    ax_abs.set_title("Risk improvement vs slate size")
    ax_rel.set_title("Relative improvement vs slate size")
    fig.tight_layout()
    return fig, annotations


def _render_regression(frame: pd.DataFrame, request: FigureRequest):
    rows = _pi_rows(frame)
    fig, ax = plt.subplots(figsize=(7, 5.5))
    annotations = {"r_squared": {}, "slope": {}, "intercept": {}}
    for k, group in rows.groupby("K"):
        x = group["predicted_improvement"].to_numpy()
        y = group["delta_nmse"].to_numpy()
        slope, intercept, r_squared = fit_line(x, y)
        annotations["r_squared"][int(k)] = r_squared
        annotations["slope"][int(k)] = slope
        annotations["intercept"][int(k)] = intercept
        points = ax.scatter(x, y, s=14, alpha=0.6, label=f"K={int(k)} (R²={r_squared:.2f})")
        grid = np.linspace(float(x.min()), float(x.max()), 50)
        ax.plot(grid, intercept + slope * grid, color=points.get_facecolor()[0], lw=1.5)
    ax.set_xlabel("predicted improvement")
    ax.set_ylabel("observed delta_nmse")
    ax.set_title("Observed vs predicted risk improvement")
    ax.legend()
    if request.log_scale:
        ax.set_xscale("log")
        ax.set_yscale("log")
    return fig, annotations


_RENDERERS = {
    "prior_grid": _render_prior_grid,
    "cardinality_grid": _render_cardinality_grid,
    "slot_sweep": _render_slot_sweep,
    "regression": _render_regression,
}


def render(request: FigureRequest) -> RenderResult:
    """Render one figure from a results CSV and write it to the output path."""
    frame = load_results(request.csv_path, request.figure_kind)
    fig, annotations = _RENDERERS[request.figure_kind](frame, request)
    out = Path(request.output_image_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return RenderResult(output_path=str(out), annotations=annotations)
