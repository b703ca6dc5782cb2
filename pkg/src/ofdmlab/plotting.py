"""Figure rendering for result tables: one SVG per column family."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Column families drawn on a log axis against the sweep column.
_LOG_FAMILIES = ("mse", "ber")
_MARKERS = ("o", "s", "^", "d", "v", "*")


def _family(name: str) -> str:
    return name.split("_", 1)[0]


def render_columns(x_name, x, series: dict, out_dir, stem: str) -> list:
    """Group series by family prefix and save one figure per family."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    families: dict[str, dict] = {}
    for name, values in series.items():
        families.setdefault(_family(name), {})[name] = values

    paths = []
    for family, cols in sorted(families.items()):
        fig, ax = plt.subplots(figsize=(5.5, 4.0))
        for marker, (name, values) in zip(_MARKERS, sorted(cols.items())):
            ax.plot(x, values, marker=marker, markersize=4, label=name)
        if family in _LOG_FAMILIES:
            ax.set_yscale("log")
        ax.set_xlabel(x_name)
        ax.set_ylabel(family)
        ax.grid(True, which="both", alpha=0.4)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{stem}_{family}.svg"
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths


def render_table(table, out_dir, stem: str) -> list:
    """Plot every non-count column of a ResultTable against its first column."""
    x_name = table.columns[0]
    x = table.column(x_name)
    series = {}
    for name in table.columns[1:]:
        if name.startswith(("subframes", "bits", "errors")):
            continue
        series[name] = table.column(name)
    if not series:
        return []
    return render_columns(x_name, x, series, out_dir, stem)


def render_csv(csv_path, out_dir=None) -> list:
    """Re-plot a previously written results file."""
    csv_path = Path(csv_path)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(cell) for cell in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{csv_path} has no data rows")
    cols = list(zip(*rows))
    series = {
        name: cols[i]
        for i, name in enumerate(header[1:], start=1)
        if not name.startswith(("subframes", "bits", "errors"))
    }
    out = Path(out_dir) if out_dir is not None else csv_path.parent
    return render_columns(header[0], cols[0], series, out, csv_path.stem)
