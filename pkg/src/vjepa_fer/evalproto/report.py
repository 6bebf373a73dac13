"""File outputs: metrics.json, confusion CSV/SVG heatmaps, PCA coordinates."""

from __future__ import annotations

import csv
import io
import json
import os
from html import escape
from pathlib import Path

import numpy as np

from vjepa_fer.autodiff.checkpoint import atomic_write_bytes
from vjepa_fer.evalproto.evaluate import MetricsReport


def write_metrics_json(path: str | os.PathLike, reports: dict[str, MetricsReport] | MetricsReport) -> None:
    if isinstance(reports, MetricsReport):
        obj = reports.to_dict()
    else:
        obj = {key: rep.to_dict() for key, rep in reports.items()}
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def confusion_csv(labels, matrix: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred", *labels])
    for name, row in zip(labels, matrix):
        w.writerow([name, *(_fmt(v) for v in row)])
    return buf.getvalue()


def _fmt(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(round(v, 6))


def write_confusion_csv(path: str | os.PathLike, labels, matrix: np.ndarray) -> None:
    atomic_write_bytes(path, confusion_csv(labels, matrix).encode())


def confusion_svg(labels, matrix: np.ndarray, title: str = "") -> str:
    """Row-normalised heatmap; cell text is the percentage of the true class."""
    m = np.asarray(matrix, dtype=np.float64)
    rows = m.sum(axis=1, keepdims=True)
    frac = np.divide(m, rows, out=np.zeros_like(m), where=rows > 0)
    k = len(labels)
    cell, margin = 48, 90
    size = margin + k * cell + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" '
           f'font-family="sans-serif" font-size="11">']
    if title:
        out.append(f'<text x="{size / 2}" y="14" text-anchor="middle">{escape(title)}</text>')
    for i in range(k):
        y = margin + i * cell
        out.append(f'<text x="{margin - 4}" y="{y + cell / 2 + 4}" text-anchor="end">{escape(labels[i])}</text>')
        out.append(f'<text x="{margin + i * cell + cell / 2}" y="{margin - 6}" text-anchor="end" '
                   f'transform="rotate(-45 {margin + i * cell + cell / 2} {margin - 6})">{escape(labels[i])}</text>')
        for j in range(k):
            shade = int(round(255 * (1 - frac[i, j])))
            fill = f"rgb({shade},{shade},255)"
            x = margin + j * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#888"/>')
            color = "white" if frac[i, j] > 0.5 else "black"
            out.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                       f'fill="{color}">{100 * frac[i, j]:.1f}</text>')
    out.append(f'<text x="{margin + k * cell / 2}" y="{size + 14}" text-anchor="middle">predicted</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_confusion_svg(path: str | os.PathLike, labels, matrix: np.ndarray, title: str = "") -> None:
    atomic_write_bytes(path, confusion_svg(labels, matrix, title).encode())


def write_pca_csv(path: str | os.PathLike, coords: np.ndarray, labels) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x", "y", "label"))
    for (x, y), lab in zip(coords, labels):
        w.writerow((repr(float(x)), repr(float(y)), lab))
    atomic_write_bytes(Path(path), buf.getvalue().encode())
