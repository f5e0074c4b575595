"""Atomic file emission: trace CSV, summary JSON, plot-data text and SVG charts."""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

OUTPUT_ROOT_ENV = "SHUFFLESGD_OUTPUT_ROOT"


def resolve_output_dir(output_dir: str) -> Path:
    """Relative directories are placed under ``$SHUFFLESGD_OUTPUT_ROOT`` when set."""
    path = Path(output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def write_atomic(path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, payload) -> Path:
    return write_atomic(path, json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def plot_data(series: Mapping[str, tuple], x_label: str = "effective_passes",
              y_label: str = "metric") -> str:
    """Two-column blocks, one per series, separated by blank lines.

    Each block starts with ``# <label>``; gnuplot reads the blocks with
    ``index``, numpy with ``np.loadtxt`` on a single-series file.
    """
    blocks = []
    for label, (x, y) in series.items():
        rows = [f"# {label}", f"# {x_label} {y_label}"]
        rows += [f"{xv!r} {_num(yv)}" for xv, yv in zip(map(float, x), map(float, y))]
        blocks.append("\n".join(rows))
    return "\n\n\n".join(blocks) + "\n"


def _num(value: float) -> str:
    return "nan" if math.isnan(value) else repr(value)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def svg_line_chart(series: Mapping[str, tuple], title: str = "", x_label: str = "effective passes",
                   y_label: str = "", log_x: bool = True, log_y: bool = True,
                   width: int = 640, height: int = 420) -> str:
    """Static SVG line chart. Points that cannot be shown on a log axis are skipped."""
    left, right, top, bottom = 70, 160, 40, 50
    pw, ph = width - left - right, height - top - bottom
    clean = {}
    for label, (x, y) in series.items():
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if log_x:
            keep &= x > 0
        if log_y:
            keep &= y > 0
        if keep.any():
            clean[label] = (x[keep], y[keep])

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>']
    if not clean:
        out.append(f'<text x="{left}" y="{top + 20}">no plottable data</text></svg>')
        return "\n".join(out) + "\n"

    fx = np.log10 if log_x else (lambda v: v)
    fy = np.log10 if log_y else (lambda v: v)
    xs = np.concatenate([fx(x) for x, _ in clean.values()])
    ys = np.concatenate([fy(y) for _, y in clean.values()])
    x0, x1 = _padded(xs.min(), xs.max())
    y0, y1 = _padded(ys.min(), ys.max())

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for tick in _ticks(x0, x1):
        label = f"1e{tick:g}" if log_x else f"{tick:g}"
        out.append(f'<line x1="{px(tick):.1f}" y1="{top + ph}" x2="{px(tick):.1f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(tick):.1f}" y="{top + ph + 16}" text-anchor="middle">{label}</text>')
    for tick in _ticks(y0, y1):
        label = f"1e{tick:g}" if log_y else f"{tick:g}"
        out.append(f'<line x1="{left - 4}" y1="{py(tick):.1f}" x2="{left}" y2="{py(tick):.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{py(tick) + 4:.1f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(y_label)}</text>')

    for k, (label, (x, y)) in enumerate(clean.items()):
        color = _PALETTE[k % len(_PALETTE)]
        pts = _thin(px(fx(x)), py(fy(y)))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 16 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _padded(lo: float, hi: float):
    if hi - lo < 1e-12:
        return lo - 0.5, hi + 0.5
    pad = 0.03 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, count: int = 6) -> Sequence[float]:
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=mag)
    start = math.ceil(lo / step) * step
    return [round(start + i * step, 10) for i in range(int((hi - start) / step) + 1)]


def _thin(px: np.ndarray, py: np.ndarray, limit: int = 2000) -> str:
    # long traces: keep an evenly spaced subset plus the last point
    if px.size > limit:
        idx = np.unique(np.append(np.linspace(0, px.size - 1, limit).astype(int), px.size - 1))
        px, py = px[idx], py[idx]
    return " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py))
