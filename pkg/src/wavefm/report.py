"""Delimited outputs and figure rendering.

Every artifact written by the CLI starts with a reproducibility header
(version, config hash, seed) as '#'-prefixed comment lines; figures are
rendered to PNG next to the CSVs they illustrate.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

VERSION = "0.1.0"


def repro_header(config_hash, seed, **extra):
    fields = {"version": VERSION, "config_hash": config_hash, "seed": seed}
    fields.update(extra)
    return fields


def write_csv(path, header_fields, columns, rows):
    """CSV with '# key: value' reproducibility comments, then a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for key, value in header_fields.items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(row)
    path.write_text(buf.getvalue())


def read_csv(path):
    """Read back a commented CSV -> (header_fields, columns, rows)."""
    fields = {}
    rows = []
    columns = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(": ")
                fields[key] = value
                continue
            parsed = next(csv.reader([line]))
            if columns is None:
                columns = parsed
            else:
                rows.append(parsed)
    return fields, columns, rows


def save_ecdf_plot(path, curves, xlabel="sum rate (bits/s/Hz)", title=None):
    """curves: {label: EcdfTable}."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, table in curves.items():
        ax.step(table.values, table.probs, where="post", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("empirical CDF")
    ax.set_ylim(0, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_plot(path, x, series, xlabel, ylabel, title=None, logx=False):
    """series: {label: list of y} over shared x."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, ys in series.items():
        ax.plot(x, ys, marker="o", label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_heatmap(path, grid, title=None, cmap="viridis"):
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(np.asarray(grid), cmap=cmap)
    fig.colorbar(im, ax=ax, shrink=0.85)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_heatmap_row(path, grids, titles=None, cmap="viridis"):
    """One row of heatmaps sharing a color scale (per-layer attention)."""
    n = len(grids)
    fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.6), squeeze=False)
    for i, grid in enumerate(grids):
        ax = axes[0][i]
        ax.imshow(np.asarray(grid), cmap=cmap, vmin=0.0, vmax=1.0)
        ax.set_xticks([])
        ax.set_yticks([])
        if titles:
            ax.set_title(titles[i], fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_training_curve(path, log_rows, title=None):
    """log_rows: dicts with epoch plus per-component losses."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    epochs = [r["epoch"] for r in log_rows]
    for key in ("total", "csi", "loc", "occ", "spec"):
        if key in log_rows[0]:
            ax.plot(epochs, [r[key] for r in log_rows], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
