"""Boxplot panels for simulation records CSVs.

One panel per estimate column: a box per sweep value, a dashed horizontal
line at the configured truth, and a diamond at each per-box mean. Figure
specs use the same TOML key-value format as the simulation configs. The
scripts never modify their input CSVs, and rendering is style-pinned so the
same input yields the same image bytes.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import tomli

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "remle-figures",
}


class SchemaError(ValueError):
    """The CSV does not carry a column the figure spec references."""


@dataclass(frozen=True)
class FigureSpec:
    input_csv: Optional[str]
    sweep_column: str
    estimate_columns: tuple
    truth_values: tuple
    output: str
    title: str = ""

    def __post_init__(self):
        if len(self.estimate_columns) != len(self.truth_values):
            raise ValueError(
                f"{len(self.estimate_columns)} estimate columns but "
                f"{len(self.truth_values)} truth values"
            )
        if not self.estimate_columns:
            raise ValueError("figure spec needs at least one estimate column")


def load_spec(path) -> FigureSpec:
    try:
        data = tomli.loads(Path(path).read_text())
    except tomli.TOMLDecodeError as exc:
        raise ValueError(f"figure spec parse error in {path}: {exc}") from exc
    known = {"input", "sweep_column", "estimate_columns", "truth_values", "output", "title"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown field(s) {sorted(unknown)}")
    for key in ("sweep_column", "estimate_columns", "truth_values", "output"):
        if key not in data:
            raise ValueError(f"{path}: missing required field {key!r}")
    return FigureSpec(
        input_csv=data.get("input"),
        sweep_column=str(data["sweep_column"]),
        estimate_columns=tuple(str(c) for c in data["estimate_columns"]),
        truth_values=tuple(float(v) for v in data["truth_values"]),
        output=str(data["output"]),
        title=str(data.get("title", "")),
    )


def read_columns(csv_path, columns: Sequence[str]) -> dict:
    """Read the named columns from a records CSV as string lists."""
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{csv_path} is empty") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(
                f"{csv_path} is missing column(s) {missing}; header has {header}"
            )
        idx = {c: header.index(c) for c in columns}
        out = {c: [] for c in columns}
        for row in reader:
            for c in columns:
                out[c].append(row[idx[c]])
    return out


def group_by_sweep(sweep_raw, values_raw):
    """Group float values by sweep label, keyed in numeric order when possible."""

    def key(s):
        try:
            return (0, float(s), s)
        except ValueError:
            return (1, 0.0, s)

    labels = sorted(dict.fromkeys(sweep_raw), key=key)
    grouped = {lab: [] for lab in labels}
    for lab, val in zip(sweep_raw, values_raw):
        grouped[lab].append(float(val))
    return labels, [np.asarray(grouped[lab]) for lab in labels]


def render_boxplot(spec: FigureSpec, csv_path=None):
    """Render the panels and write spec.output; returns the Figure."""
    path = csv_path or spec.input_csv
    if path is None:
        raise ValueError("no input CSV: give one on the command line or in the spec")
    data = read_columns(path, [spec.sweep_column, *spec.estimate_columns])
    n_panels = len(spec.estimate_columns)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n_panels, figsize=(3.2 * n_panels, 3.0), squeeze=False)
        for k, (column, truth) in enumerate(zip(spec.estimate_columns, spec.truth_values)):
            ax = axes[0, k]
            labels, groups = group_by_sweep(data[spec.sweep_column], data[column])
            positions = np.arange(1, len(labels) + 1)
            ax.boxplot(groups, positions=positions, widths=0.6, showfliers=True,
                       flierprops={"markersize": 3})
            ax.axhline(truth, linestyle="--", color="tab:red", linewidth=1.0,
                       label="truth", zorder=1)
            means = [g.mean() for g in groups]
            ax.plot(positions, means, linestyle="none", marker="D", color="black",
                    markersize=5, label="mean", zorder=3)
            ax.set_xticks(positions)
            ax.set_xticklabels(labels)
            ax.set_xlabel(spec.sweep_column)
            ax.set_ylabel(column)
            ax.legend(loc="best", fontsize=7)
        if spec.title:
            fig.suptitle(spec.title)
        fig.tight_layout()
        out = Path(spec.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        metadata = {"Date": None} if out.suffix == ".svg" else None
        fig.savefig(out, metadata=metadata)
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render_figures",
        description="Render boxplot panels (dashed truth lines, diamond means) "
                    "from a remle records CSV.",
    )
    parser.add_argument("csv", nargs="?", default=None,
                        help="records CSV (optional when the spec names one)")
    parser.add_argument("spec", help="figure spec (TOML)")
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args.spec)
        fig = render_boxplot(spec, csv_path=args.csv)
        plt.close(fig)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {spec.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
