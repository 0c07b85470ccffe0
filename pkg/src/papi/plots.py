"""Minimal self-contained SVG line charts for metrics CSVs."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

CHARTS: dict[str, tuple[str, ...]] = {
    "losses": ("cla_loss", "ali_loss"),
    "accuracy": ("train_acc", "test_acc", "proto_acc", "disamb_purity"),
    "disagreement": ("lin_right_proto_wrong", "proto_right_lin_wrong"),
    "similarity": ("intra_sim", "inter_sim"),
}

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 640, 400
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 150, 40, 50


class PlotError(ValueError):
    pass


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_chart_svg(x: list[float], series: dict[str, list[float]], title: str, xlabel: str, ylabel: str) -> str:
    """One polyline per series over shared x values."""
    if not x:
        raise PlotError("nothing to plot: no rows")
    finite = [v for ys in series.values() for v in ys if math.isfinite(v)]
    y_lo, y_hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    x_lo, x_hi = min(x), max(x)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def px(v):
        return _LEFT + (v - x_lo) / (x_hi - x_lo) * pw

    def py(v):
        return _TOP + ph - (v - y_lo) / (y_hi - y_lo) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{_LEFT}" y1="{_TOP + ph}" x2="{_LEFT + pw}" y2="{_TOP + ph}" stroke="black"/>',
        f'<line x1="{_LEFT}" y1="{_TOP}" x2="{_LEFT}" y2="{_TOP + ph}" stroke="black"/>',
        f'<text x="{_LEFT + pw / 2:.1f}" y="{_H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="18" y="{_TOP + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 18 {_TOP + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        xv = x_lo + frac * (x_hi - x_lo)
        out.append(f'<text x="{_LEFT - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{_fmt(yv)}</text>')
        out.append(f'<text x="{px(xv):.1f}" y="{_TOP + ph + 16}" text-anchor="middle">{_fmt(xv)}</text>')
    for i, (name, ys) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, ys) if math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"><title>{escape(name)}</title></polyline>')
        ly = _TOP + 14 + 18 * i
        out.append(f'<line x1="{_W - _RIGHT + 10}" y1="{ly - 4}" x2="{_W - _RIGHT + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _RIGHT + 35}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_columns(path) -> dict[str, list[float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[float]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v))
    return cols


def emit_plots(metrics_csv, out_dir, charts: dict[str, tuple[str, ...]] | None = None) -> list[Path]:
    """Write ``<stem>_<chart>.svg`` for each chart; raises before writing anything on bad input."""
    charts = CHARTS if charts is None else charts
    path = Path(metrics_csv)
    cols = read_columns(path)
    if "epoch" not in cols:
        raise PlotError(f"{path}: missing column 'epoch'")
    for columns in charts.values():
        for c in columns:
            if c not in cols:
                raise PlotError(f"{path}: missing column '{c}'")
    if not cols["epoch"]:
        raise PlotError(f"{path}: metrics file has no epochs")
    svgs = {
        name: line_chart_svg(cols["epoch"], {c: cols[c] for c in columns}, f"{path.stem}: {name}", "epoch", name)
        for name, columns in charts.items()
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, svg in svgs.items():
        target = out / f"{path.stem}_{name}.svg"
        target.write_text(svg, encoding="utf-8")
        written.append(target)
    return written
