"""Render training metrics to figures.

Works off the metrics.csv that training appends to. A resumed run
re-appends rows for steps after the restored checkpoint, so rows are
deduplicated keeping the last occurrence per step before plotting.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .training import METRICS_HEADER


def read_metrics(path) -> dict:
    """Columns as float lists, deduplicated by step (last row wins)."""
    by_step = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty metrics file")
        if tuple(header) != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected columns {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
            by_step[int(values[0])] = values
    if not by_step:
        raise ValueError(f"{path}: no data rows")
    steps = sorted(by_step)
    cols = {name: [by_step[s][i] for s in steps] for i, name in enumerate(header)}
    cols["step"] = [float(s) for s in steps]
    return cols


def render_report(metrics_path, out_dir=None) -> list:
    """Write loss-curve figures next to the csv; returns the file paths."""
    cols = read_metrics(metrics_path)
    if out_dir is None:
        out_dir = os.path.dirname(os.path.abspath(metrics_path))
    os.makedirs(out_dir, exist_ok=True)
    steps = cols["step"]
    written = []

    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(steps, cols["g_loss"], label="generator", lw=1.0)
    ax.plot(steps, cols["d_loss"], label="critic", lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("adversarial losses")
    ax.legend()
    ax.grid(True, alpha=0.3)
    path = os.path.join(out_dir, "loss_curves.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for ax, key, title in zip(axes, ("rec", "gp", "drift"), ("masked L1", "gradient penalty", "drift")):
        ax.plot(steps, cols[key], lw=1.0)
        ax.set_xlabel("step")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
    axes[0].set_yscale("log")
    fig.tight_layout()
    path = os.path.join(out_dir, "loss_terms.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written
