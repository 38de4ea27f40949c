"""Dependency-free SVG line charts for training curves."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

# panel name -> (CSV column, axis label)
PANELS = {
    "val_reward": ("val_reward", "validation reward"),
    "kl_initial": ("kl_initial", "KL to initial policy"),
    "entropy": ("entropy", "token entropy (nats)"),
    "kl_lagged": ("kl_lagged", "KL to lagged reference"),
}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=20, top=40, bottom=50)


def read_metrics_csv(path) -> dict[str, np.ndarray]:
    """Columns of a metrics CSV as float arrays (``nan`` where not evaluated)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty metrics file") from None
        rows = list(reader)
    cols = {}
    for i, name in enumerate(header):
        cols[name] = np.array([float(r[i]) for r in rows], dtype=np.float64)
    return cols


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def line_chart_svg(series: dict[str, tuple], title: str, xlabel: str, ylabel: str) -> str:
    """Render ``{label: (x, y)}`` as an SVG document; NaN points are skipped."""
    pts = [(np.asarray(x, float), np.asarray(y, float)) for x, y in series.values()]
    finite = [(x[np.isfinite(y)], y[np.isfinite(y)]) for x, y in pts]
    xs = np.concatenate([x for x, _ in finite]) if finite else np.zeros(0)
    ys = np.concatenate([y for _, y in finite]) if finite else np.zeros(0)
    x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
    y0, y1 = (ys.min(), ys.max()) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           'fill="none" stroke="#444"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.1f}" y1="{MARGIN["top"] + ph}" x2="{sx(t):.1f}" '
                   f'y2="{MARGIN["top"] + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{sx(t):.1f}" y="{MARGIN["top"] + ph + 18}" '
                   f'text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{sy(t):.1f}" x2="{MARGIN["left"] + pw}" '
                   f'y2="{sy(t):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{sy(t) + 4:.1f}" '
                   f'text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2}" y="{HEIGHT - 12}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text transform="translate(16,{MARGIN["top"] + ph / 2}) rotate(-90)" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    for i, (label, (x, y)) in enumerate(zip(series, finite)):
        color = PALETTE[i % len(PALETTE)]
        if x.size:
            path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = MARGIN["top"] + 16 + 16 * i
        lx = MARGIN["left"] + pw - 150
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_runs(runs: dict[str, dict], out_dir, prefix: str = "") -> list[Path]:
    """Write one SVG per panel, overlaying every run. ``runs`` maps a label
    to CSV-style columns (see :func:`read_metrics_csv`)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for panel, (column, label) in PANELS.items():
        series = {name: (cols["step"], cols[column]) for name, cols in runs.items()}
        path = out_dir / f"{prefix}{panel}.svg"
        path.write_text(line_chart_svg(series, label, "step", label), encoding="utf-8")
        paths.append(path)
    return paths


def plot_csv(csv_path, out_dir=None) -> list[Path]:
    csv_path = Path(csv_path)
    cols = read_metrics_csv(csv_path)
    out_dir = csv_path.parent if out_dir is None else out_dir
    return plot_runs({csv_path.stem: cols}, out_dir)
