"""
Static SVG figures for the benchmark and evaluation reports.

Every figure carries the table it was drawn from underneath the axes, so a
single SVG file is self-contained. Output is byte-stable: no timestamps and
a fixed SVG id salt.
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

# Setup logging
logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "edgevote"
plt.rcParams["svg.fonttype"] = "path"

LINE_COLORS = ["#2E86C1", "#E67E22", "#27AE60", "#8E44AD", "#C0392B"]


def _format_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{value:.4g}"
    return str(value)


def _attach_table(ax, table: pd.DataFrame, max_rows: int = 20) -> None:
    shown = table.head(max_rows)
    cells = [[_format_cell(v) for v in row] for row in shown.itertuples(index=False)]
    if not cells:
        return
    drawn = ax.table(cellText=cells, colLabels=list(shown.columns), loc="bottom",
                     cellLoc="center", bbox=[0.0, -0.25 - 0.07 * len(cells), 1.0, 0.07 * (len(cells) + 1)])
    drawn.auto_set_font_size(False)
    drawn.set_fontsize(7)


def _save(fig, path: Union[str, Path]) -> None:
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Wrote figure {path}")


def render_line_chart(table: pd.DataFrame, x: str, series: Dict[str, str], path: Union[str, Path],
                      title: str, xlabel: str, ylabel: str) -> None:
    """
    Line chart of one or more table columns against another.

    Args:
        table: Data source, embedded below the chart
        x: Column on the horizontal axis
        series: Legend label -> column name
        path: Output SVG file
    """
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, (label, column) in enumerate(series.items()):
        ax.plot(table[x], table[column], "o-", label=label, color=LINE_COLORS[i % len(LINE_COLORS)])
    ax.set_title(title, fontsize=12, fontweight="bold")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, linestyle="--", alpha=0.6)
    if len(series) > 1:
        ax.legend()
    _attach_table(ax, table)
    _save(fig, path)


def render_accuracy_curve(curves: Dict[str, Dict[str, np.ndarray]], path: Union[str, Path],
                          title: str = "Accuracy vs distance threshold",
                          summary: Optional[pd.DataFrame] = None) -> None:
    """
    Accuracy-threshold curves (the area under each is the AUC).

    Args:
        curves: Legend label -> {"threshold": meters, "accuracy": percent}
        summary: Optional table embedded below the chart (e.g. the AUC values)
    """
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, (label, curve) in enumerate(curves.items()):
        ax.step(np.asarray(curve["threshold"]) * 100.0, curve["accuracy"], where="post",
                label=label, color=LINE_COLORS[i % len(LINE_COLORS)])
    ax.set_title(title, fontsize=12, fontweight="bold")
    ax.set_xlabel("Threshold (cm)")
    ax.set_ylabel("Accuracy (%)")
    ax.set_ylim(0.0, 100.0)
    ax.grid(True, linestyle="--", alpha=0.6)
    ax.legend()
    if summary is not None:
        _attach_table(ax, summary)
    _save(fig, path)


def render_bar_chart(table: pd.DataFrame, category: str, values: Sequence[str], path: Union[str, Path],
                     title: str, ylabel: str) -> None:
    """Grouped bars, one group per row of `table`"""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    positions = np.arange(len(table))
    width = 0.8 / max(len(values), 1)
    for i, column in enumerate(values):
        ax.bar(positions + i * width, table[column], width, label=column,
               color=LINE_COLORS[i % len(LINE_COLORS)], alpha=0.8)
    ax.set_xticks(positions + width * (len(values) - 1) / 2)
    ax.set_xticklabels([str(v) for v in table[category]])
    ax.set_title(title, fontsize=12, fontweight="bold")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3, axis="y")
    if len(values) > 1:
        ax.legend()
    _attach_table(ax, table)
    _save(fig, path)
