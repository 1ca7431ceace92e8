"""Bundle serialization: CSV tables, JSON manifest and rendered figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .experiments import CurveFigure, ResultBundle  # noqa: E402


def write_table(rows: list[dict], path: Path) -> None:
    if not rows:
        return
    headers: list[str] = []
    for row in rows:
        for key in row:
            if key not in headers:
                headers.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=headers)
        writer.writeheader()
        writer.writerows(rows)


def write_measurements(matrix, path: Path) -> None:
    """Observation matrix as CSV: one row per sensor, one column per step."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"t{j}" for j in range(matrix.shape[1])])
        writer.writerows(matrix.tolist())


def render_figure(fig_spec: CurveFigure, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (x, y) in fig_spec.series.items():
        ax.plot(x, y, marker="o", markersize=3, label=label)
    ax.set_xlabel(fig_spec.xlabel)
    ax.set_ylabel(fig_spec.ylabel)
    ax.set_title(fig_spec.title)
    if fig_spec.logy:
        ax.set_yscale("log")
    if fig_spec.series:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_bundle(bundle: ResultBundle, out_dir: str | Path,
                 figures: bool = False) -> Path:
    """Write tables and the manifest; optionally render every figure."""
    out = Path(out_dir) / bundle.name
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in bundle.tables.items():
        write_table(rows, out / f"{name}.csv")
    with open(out / "manifest.json", "w") as fh:
        json.dump(bundle.manifest, fh, indent=2, sort_keys=True)
    if bundle.failures:
        with open(out / "failures.txt", "w") as fh:
            fh.write("\n".join(bundle.failures) + "\n")
    if figures:
        for name, spec in bundle.curves.items():
            render_figure(spec, out / f"{name}.png")
    return out
