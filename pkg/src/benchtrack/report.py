"""Run artifacts: CSV tables at fixed precision, JSON reports with sorted
keys, and figure rendering.  Everything written here is deterministic for a
given run configuration and seed (no timestamps, no environment capture), so
identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

CSV_FORMAT = "%.12g"


def format_cell(value):
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    v = float(value)
    if math.isnan(v):
        return "nan"
    return CSV_FORMAT % v


def write_csv(path, names, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(names)]
    for row in rows:
        if len(row) != len(names):
            raise ValueError(
                f"row has {len(row)} cells for {len(names)} columns")
        lines.append(",".join(format_cell(c) for c in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return value


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2)
                    + "\n")
    return path


def run_payload(config, results):
    """One run-report dict: the full configuration first, so any output can
    be regenerated from the report alone, then the results."""
    return {"config": _jsonable(config), "results": _jsonable(results)}


# -- figures --------------------------------------------------------------------


def render_lines(path, x, series, labels, title="", xlabel="", ylabel="",
                 second_panel=None, second_labels=None, second_ylabel=""):
    """Line plot of columns in `series` against x; optional second panel
    below sharing the x axis.  Imported lazily so CSV-only runs never touch
    matplotlib."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_panels = 2 if second_panel is not None else 1
    fig, axes = plt.subplots(n_panels, 1, figsize=(7.0, 3.4 * n_panels),
                             sharex=True, squeeze=False)
    ax = axes[0, 0]
    for col, label in zip(np.atleast_2d(series), labels):
        ax.plot(x, col, label=label)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    if second_panel is not None:
        ax2 = axes[1, 0]
        for col, label in zip(np.atleast_2d(second_panel),
                              second_labels or labels):
            ax2.plot(x, col, label=label)
        ax2.set_ylabel(second_ylabel)
        ax2.legend(fontsize=8)
        ax2.grid(alpha=0.3)
    axes[-1, 0].set_xlabel(xlabel)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_field_heatmap(path, x_nodes, y_nodes, values, title="",
                         xlabel="", ylabel=""):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    mesh = ax.pcolormesh(x_nodes, y_nodes, values, shading="auto")
    fig.colorbar(mesh, ax=ax)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
