"""Dependency-free SVG charts from the CSV files this package writes."""

from __future__ import annotations

import csv
import math
import os
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
HIST_HEADER = ["bin_lo", "bin_hi", "count"]


class PlotError(ValueError):
    pass


def _num(s):
    try:
        v = float(s)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def read_table(path):
    """Header plus float columns; label columns (non-numeric in row 1) are dropped."""
    if not os.path.exists(path):
        raise PlotError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(rows):
        raise PlotError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    if not body:
        raise PlotError(f"{path}: no data rows")
    numeric = [i for i, s in enumerate(body[0]) if _num(s) is not None] if len(body[0]) == len(header) else []
    cols = {header[i]: [] for i in numeric}
    for ln, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise PlotError(f"{path}: line {ln}: expected {len(header)} fields, got {len(row)}")
        for i in numeric:
            v = _num(row[i])
            if v is None:
                raise PlotError(f"{path}: line {ln}: column {header[i]!r} is not a finite number: {row[i]!r}")
            cols[header[i]].append(v)
    if not cols:
        raise PlotError(f"{path}: no numeric columns")
    return header, cols


class _Frame:
    def __init__(self, width, height, xlo, xhi, ylo, yhi, margin=56):
        self.w, self.h, self.m = width, height, margin
        if xhi == xlo:
            xlo, xhi = xlo - 0.5, xhi + 0.5
        if yhi == ylo:
            ylo, yhi = ylo - 0.5, yhi + 0.5
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def x(self, v):
        return self.m + (v - self.xlo) / (self.xhi - self.xlo) * (self.w - 2 * self.m)

    def y(self, v):
        return self.h - self.m - (v - self.ylo) / (self.yhi - self.ylo) * (self.h - 2 * self.m)

    def axes(self, xlabel, ylabel):
        m, w, h = self.m, self.w, self.h
        out = [f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
               f'<line x1="{m}" y1="{h - m}" x2="{w - m}" y2="{h - m}" stroke="black"/>',
               f'<line x1="{m}" y1="{m}" x2="{m}" y2="{h - m}" stroke="black"/>']
        for i in range(5):
            fx = self.xlo + (self.xhi - self.xlo) * i / 4
            fy = self.ylo + (self.yhi - self.ylo) * i / 4
            out.append(f'<text x="{self.x(fx):.2f}" y="{h - m + 16}" font-size="11" '
                       f'text-anchor="middle">{fx:.4g}</text>')
            out.append(f'<text x="{m - 6}" y="{self.y(fy) + 4:.2f}" font-size="11" '
                       f'text-anchor="end">{fy:.4g}</text>')
        out.append(f'<text x="{w / 2:.2f}" y="{h - 12}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
        out.append(f'<text x="14" y="{h / 2:.2f}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 14 {h / 2:.2f})">{escape(ylabel)}</text>')
        return out


def _svg(width, height, body, title):
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>{escape(title)}</title>", *body, "</svg>", ""])


def line_svg(header, cols, title="", width=640, height=400, logx=False, logy=False) -> str:
    names = list(cols)
    if len(names) >= 2:
        xname, series = names[0], names[1:]
        xs = cols[xname]
    else:
        xname, series = "index", names
        xs = [float(i) for i in range(len(cols[names[0]]))]
    # non-positive values cannot sit on a log axis; such points are dropped per series
    tx = (lambda v: math.log10(v) if v > 0 else None) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v) if v > 0 else None) if logy else (lambda v: v)
    X = [tx(v) for v in xs]
    pts_by = {s: [(a, ty(b)) for a, b in zip(X, cols[s])] for s in series}
    pts_by = {s: [(a, b) for a, b in p if a is not None and b is not None] for s, p in pts_by.items()}
    allp = [q for p in pts_by.values() for q in p]
    if not allp:
        raise PlotError("log axes need positive values")
    fr = _Frame(width, height, min(a for a, _ in allp), max(a for a, _ in allp),
                min(b for _, b in allp), max(b for _, b in allp))
    body = fr.axes(xname + (" (log10)" if logx else ""), ", ".join(series) + (" (log10)" if logy else ""))
    for i, s in enumerate(series):
        pts = " ".join(f"{fr.x(a):.2f},{fr.y(b):.2f}" for a, b in pts_by[s])
        color = PALETTE[i % len(PALETTE)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        body.append(f'<text x="{width - fr.m + 4}" y="{fr.m + 14 * i:.2f}" font-size="11" '
                    f'fill="{color}">{escape(s)}</text>')
    return _svg(width, height, body, title)


def histogram_svg(cols, title="", width=640, height=400) -> str:
    lo, hi, cnt = cols["bin_lo"], cols["bin_hi"], cols["count"]
    fr = _Frame(width, height, min(lo), max(hi), 0.0, max(cnt) if max(cnt) > 0 else 1.0)
    body = fr.axes("error", "count")
    for a, b, c in zip(lo, hi, cnt):
        x0, x1 = fr.x(a), fr.x(b)
        y = fr.y(c)
        body.append(f'<rect x="{x0:.2f}" y="{y:.2f}" width="{max(x1 - x0, 0.0):.2f}" '
                    f'height="{fr.y(0.0) - y:.2f}" fill="{PALETTE[0]}" stroke="white" stroke-width="0.5"/>')
    return _svg(width, height, body, title)


def plot_export(csv_path, out_path=None, kind: str = "auto", width: int = 640, height: int = 400,
                logx: bool = False, logy: bool = False) -> str:
    """Render ``csv_path`` as an SVG file; returns the output path."""
    header, cols = read_table(csv_path)
    if kind == "auto":
        kind = "histogram" if header == HIST_HEADER else "line"
    title = os.path.basename(csv_path)
    if kind == "histogram":
        if not all(h in cols for h in HIST_HEADER):
            raise PlotError(f"{csv_path}: histogram needs columns {', '.join(HIST_HEADER)}")
        svg = histogram_svg(cols, title, width, height)
    elif kind == "line":
        svg = line_svg(header, cols, title, width, height, logx, logy)
    else:
        raise PlotError(f"unknown plot kind {kind!r}")
    out_path = out_path or os.path.splitext(csv_path)[0] + ".svg"
    with open(out_path, "w", newline="\n") as fh:
        fh.write(svg)
    return out_path
