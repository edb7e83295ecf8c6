"""Static SVG charts for sweep results."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LinearSegmentedColormap, Normalize  # noqa: E402

from .experiments import SweepResult  # noqa: E402

# green = eco-routing helps, red = it hurts, white = no change
DELTA_CMAP = LinearSegmentedColormap.from_list("eco_delta", ["#1a9641", "#ffffff", "#d7191c"])

_METRIC_LABELS = {
    "tse": ("delta_tse", "TSE change (g CO2)", "Total system emissions (g CO2)"),
    "tsfc": ("delta_tsfc", "TSFC change (kWh)", "Total system fuel consumption (kWh)"),
}


def heatmap_svg(result: SweepResult, path: str | Path, metric: str = "tse", title: str = "") -> Path:
    delta_attr, label, _ = _METRIC_LABELS[metric]
    lengths = sorted({r.key("length2_mi") for r in result.rows})
    speeds = sorted({r.key("speed2_mph") for r in result.rows})
    grid = np.full((len(lengths), len(speeds)), np.nan)
    li = {v: i for i, v in enumerate(lengths)}
    si = {v: i for i, v in enumerate(speeds)}
    for r in result.rows:
        grid[li[r.key("length2_mi")], si[r.key("speed2_mph")]] = getattr(r, delta_attr)
    vmax = float(np.nanmax(np.abs(grid))) or 1.0

    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    mesh = ax.pcolormesh(speeds, lengths, grid, cmap=DELTA_CMAP, norm=Normalize(-vmax, vmax),
                         shading="nearest")
    fig.colorbar(mesh, ax=ax, label=label)
    ax.set_xlabel("Link 2 free-flow speed (mi/hr)")
    ax.set_ylabel("Link 2 length (mi)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def fraction_svg(results: Mapping[str, SweepResult], path: str | Path, metric: str = "tse",
                 title: str = "") -> Path:
    """One line per eco class: ``metric`` against eco-routing share of demand."""
    _, _, ylabel = _METRIC_LABELS[metric]
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for name, res in results.items():
        p = [100.0 * r.key("fraction") for r in res.rows]
        y = [getattr(r.metrics, metric) for r in res.rows]
        ax.plot(p, y, marker="o", markersize=3, label=f"{name} routing")
    ax.set_xlabel("Eco-routing demand (%)")
    ax.set_ylabel(ylabel)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
