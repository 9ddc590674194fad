#!/usr/bin/env python3
"""Render figures from the diagnostics CSV contract.

Usage: plots.py <kind> <csv> <out>

kinds:
  norms      velocity-norm traces per condition kind; accepts the per-step
             norm_trace.csv (kind, step, t, norm_mean) for line traces or the
             aggregate prompt_type.csv (kind, ..., norm_mean) for one marker
             series per kind
  diversity  diversity-ratio bars per anchor from sink_experiment.csv
  recon      reconstruction bars with error bars from recon_table.csv

Output format is chosen by the output extension (.png or .svg). Rendering is
deterministic: fixed figure geometry, no embedded timestamps.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "flowinv-plots"

import matplotlib.pyplot as plt

KINDS = ("norms", "diversity", "recon")


class SchemaError(ValueError):
    """Input CSV does not carry the columns the figure needs."""


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    csv_path: Path
    out_path: Path
    title: str | None = None


def read_rows(path: Path, required: set[str]) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    missing = sorted(required - set(header))
    if missing:
        raise SchemaError(f"{path}: missing column {missing[0]!r}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _grouped(rows: list[dict], key: str) -> dict[str, list[dict]]:
    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(row[key], []).append(row)
    return groups


def _new_axes(title: str):
    fig, ax = plt.subplots(figsize=(6.4, 4.0), dpi=100)
    ax.set_title(title)
    return fig, ax


def _render_norms(spec: FigureSpec) -> tuple[plt.Figure, list[str]]:
    with open(spec.csv_path, newline="") as fh:
        header = set(csv.DictReader(fh).fieldnames or [])
    per_step = {"step", "t", "norm_mean"} <= header
    required = {"kind", "step", "t", "norm_mean"} if per_step else {"kind", "norm_mean"}
    rows = read_rows(spec.csv_path, required)
    fig, ax = _new_axes(spec.title or "Inversion velocity norms by condition kind")
    labels = []
    for kind, group in _grouped(rows, "kind").items():
        labels.append(kind)
        if per_step:
            ts = [float(r["t"]) for r in group]
            ys = [float(r["norm_mean"]) for r in group]
            ax.plot(ts, ys, marker=".", label=kind)
        else:
            ax.plot([len(labels) - 1], [float(group[0]["norm_mean"])],
                    marker="o", markersize=10, linestyle="none", label=kind)
    if not per_step:
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels)
        ax.set_xlabel("condition kind")
    else:
        ax.set_xlabel("t")
    ax.set_ylabel("normalized velocity norm")
    ax.legend()
    return fig, labels


def _render_diversity(spec: FigureSpec) -> tuple[plt.Figure, list[str]]:
    rows = read_rows(spec.csv_path, {"anchor", "delta_vis", "delta_txt", "R", "n"})
    fig, ax = _new_axes(spec.title or "Diversity ratio per anchor")
    labels = []
    for i, row in enumerate(rows):
        labels.append(row["anchor"])
        # degenerate-prompt anchors carry an empty R cell; show them at zero height
        height = float(row["R"]) if row["R"] else 0.0
        ax.bar([i], [height], label=row["anchor"])
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20)
    ax.set_xlabel("anchor")
    ax.set_ylabel("R = delta_vis / delta_txt")
    ax.legend()
    return fig, labels


def _render_recon(spec: FigureSpec) -> tuple[plt.Figure, list[str]]:
    rows = read_rows(spec.csv_path, {"config", "l1_mean", "l1_std"})
    fig, ax = _new_axes(spec.title or "Reconstruction error by inversion configuration")
    labels = []
    for i, row in enumerate(rows):
        labels.append(row["config"])
        ax.bar([i], [float(row["l1_mean"])], yerr=[float(row["l1_std"])],
               capsize=4, label=row["config"])
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20)
    ax.set_xlabel("configuration")
    ax.set_ylabel("L1 reconstruction error")
    ax.legend()
    return fig, labels


_RENDERERS = {"norms": _render_norms, "diversity": _render_diversity, "recon": _render_recon}


def render(spec: FigureSpec) -> list[str]:
    """Write the figure; returns the series labels that were drawn."""
    if spec.kind not in _RENDERERS:
        raise UsageError(f"unknown figure kind {spec.kind!r}; expected one of {KINDS}")
    suffix = spec.out_path.suffix.lower()
    if suffix not in (".png", ".svg"):
        raise UsageError(f"output must be .png or .svg, got {spec.out_path.name!r}")
    fig, labels = _RENDERERS[spec.kind](spec)
    try:
        metadata = {"Date": None} if suffix == ".svg" else None
        fig.savefig(spec.out_path, metadata=metadata)
    finally:
        plt.close(fig)
    return labels


def main(argv: list[str]) -> int:
    try:
        if len(argv) != 3:
            raise UsageError("usage: plots.py <norms|diversity|recon> <csv> <out-image>")
        spec = FigureSpec(kind=argv[0], csv_path=Path(argv[1]), out_path=Path(argv[2]))
        labels = render(spec)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 1
    except SchemaError as exc:
        print(f"error: schema: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {argv[2]} ({len(labels)} series)")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
