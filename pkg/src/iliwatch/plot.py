"""SVG rendering of fitted seasons and daily term counts.

The phase plot draws the weekly score curve, a bar above each week in the
colour of its most probable phase, and a column of five integer percentages
(one per phase, top to bottom) that always adds up to 100.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from datetime import date
from pathlib import Path

import numpy as np

from .core import DailyCounters, IliSeries, date_range
from .fluhmm import N_PHASES, PHASE_NAMES

PHASE_COLORS = ("blue", "orange", "red", "purple", "green")
SERIES_COLORS = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def largest_remainder_percent(probs) -> list[int]:
    """Round a probability vector to integer percentages that sum to exactly 100."""
    p = np.asarray(probs, dtype=float)
    total = p.sum()
    if total <= 0:
        raise ValueError("probabilities must have a positive sum")
    raw = 100.0 * p / total
    base = np.floor(raw).astype(int)
    short = 100 - int(base.sum())
    # stable sort: equal remainders go to the earlier phase
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return [int(v) for v in base]


def _svg_root(width: float, height: float) -> ET.Element:
    return ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": f"{width:g}",
            "height": f"{height:g}",
            "viewBox": f"0 0 {width:g} {height:g}",
            "font-family": "sans-serif",
        },
    )


def _text(parent, x, y, s, size=10, anchor="middle", **attrs):
    el = ET.SubElement(
        parent, "text", {"x": f"{x:.2f}", "y": f"{y:.2f}", "font-size": str(size), "text-anchor": anchor, **attrs}
    )
    el.text = s
    return el


def _write(root: ET.Element, output: str | Path | None) -> str:
    ET.indent(root)
    doc = '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"
    if output is not None:
        Path(output).write_text(doc, encoding="utf-8")
    return doc


def plot_fit(phase_probs, series: IliSeries, output: str | Path | None = None, title: str = "") -> str:
    """Render a fitted season as SVG and optionally write it to ``output``."""
    probs = np.asarray(phase_probs, dtype=float)
    if probs.ndim != 2 or probs.shape[1] != N_PHASES:
        raise ValueError("phase_probs must be weeks x 5")
    if probs.shape[0] != len(series):
        raise ValueError(f"fit has {probs.shape[0]} weeks but the series has {len(series)}")
    n = len(series)
    y = series.as_array()

    col_w = 28.0
    left, right = 50.0, 20.0
    top = 30.0 if title else 12.0
    stack_h, bar_h, plot_h, bottom = 5 * 11.0, 10.0, 220.0, 40.0
    width = left + right + col_w * max(n, 1)
    height = top + stack_h + bar_h + 10 + plot_h + bottom + 20
    root = _svg_root(width, height)
    if title:
        _text(root, width / 2, 18, title, size=13)

    stacks = ET.SubElement(root, "g", {"class": "prob-stacks"})
    bars = ET.SubElement(root, "g", {"class": "phase-bars"})
    bar_y = top + stack_h
    for w in range(n):
        cx = left + col_w * (w + 0.5)
        pct = largest_remainder_percent(probs[w])
        g = ET.SubElement(stacks, "g", {"class": "prob-stack", "data-week": str(w + 1)})
        for k in range(N_PHASES):
            _text(g, cx, top + 9 + 11 * k, str(pct[k]), size=8, fill=PHASE_COLORS[k], **{"data-phase": str(k + 1)})
        phase = int(np.argmax(probs[w]))
        ET.SubElement(
            bars,
            "rect",
            {
                "class": "phase-bar",
                "data-week": str(w + 1),
                "data-phase": str(phase + 1),
                "x": f"{left + col_w * w + 1:.2f}",
                "y": f"{bar_y:.2f}",
                "width": f"{col_w - 2:.2f}",
                "height": f"{bar_h:.2f}",
                "fill": PHASE_COLORS[phase],
            },
        )

    # score curve
    y0 = bar_y + bar_h + 10
    ymax = float(y.max()) if n and y.max() > 0 else 1.0
    axis = ET.SubElement(root, "g", {"class": "axes", "stroke": "black", "stroke-width": "1"})
    ET.SubElement(axis, "line", {"x1": f"{left:g}", "y1": f"{y0 + plot_h:g}", "x2": f"{width - right:g}", "y2": f"{y0 + plot_h:g}"})
    ET.SubElement(axis, "line", {"x1": f"{left:g}", "y1": f"{y0:g}", "x2": f"{left:g}", "y2": f"{y0 + plot_h:g}"})
    labels = ET.SubElement(root, "g", {"class": "labels"})
    for frac in (0.0, 0.5, 1.0):
        _text(labels, left - 4, y0 + plot_h * (1 - frac) + 3, f"{ymax * frac:g}", size=9, anchor="end")
    for w in range(n):
        _text(labels, left + col_w * (w + 0.5), y0 + plot_h + 14, str(w + 1), size=9)
    _text(labels, left + col_w * n / 2, y0 + plot_h + 30, "week", size=10)
    pts = " ".join(
        f"{left + col_w * (w + 0.5):.2f},{y0 + plot_h * (1 - y[w] / ymax):.2f}" for w in range(n)
    )
    ET.SubElement(root, "polyline", {"class": "score", "points": pts, "fill": "none", "stroke": "black", "stroke-width": "1.5"})
    for w in range(n):
        ET.SubElement(
            root,
            "circle",
            {"cx": f"{left + col_w * (w + 0.5):.2f}", "cy": f"{y0 + plot_h * (1 - y[w] / ymax):.2f}", "r": "2"},
        )

    legend = ET.SubElement(root, "g", {"class": "legend"})
    lx = left
    for k in range(N_PHASES):
        ET.SubElement(legend, "rect", {"x": f"{lx:.1f}", "y": f"{height - 14:.1f}", "width": "10", "height": "10", "fill": PHASE_COLORS[k]})
        _text(legend, lx + 13, height - 5, PHASE_NAMES[k], size=9, anchor="start")
        lx += 13 + 7 * len(PHASE_NAMES[k]) + 10
    return _write(root, output)


def read_label_map(path: str | Path) -> dict[str, str]:
    """``term<TAB>label`` lines, e.g. Latin transliterations for legends."""
    from .textnorm import normalize

    labels = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            term, _, label = line.rstrip("\n").partition("\t")
            labels[normalize(term.strip())] = label.strip() or term.strip()
    return labels


def plot_counts(
    counters: DailyCounters,
    output: str | Path | None = None,
    terms: list[str] | None = None,
    labels: dict[str, str] | None = None,
    day_range: tuple[date, date] | None = None,
) -> str:
    """Daily count per term as one line each, with a legend."""
    terms = terms or counters.terms()
    labels = labels or {}
    days = counters.days()
    if day_range is None:
        if not days:
            raise ValueError("no counters to plot")
        day_range = (days[0], days[-1])
    span = date_range(*day_range)
    data = np.array([[counters[(d, t)] for t in terms] for d in span], dtype=float)

    left, top, plot_w, plot_h = 50.0, 20.0, max(300.0, 22.0 * len(span)), 240.0
    legend_w = 160.0
    width, height = left + plot_w + legend_w, top + plot_h + 50
    root = _svg_root(width, height)
    ymax = float(data.max()) if data.size and data.max() > 0 else 1.0
    step = plot_w / max(len(span) - 1, 1)
    axis = ET.SubElement(root, "g", {"class": "axes", "stroke": "black"})
    ET.SubElement(axis, "line", {"x1": f"{left:g}", "y1": f"{top + plot_h:g}", "x2": f"{left + plot_w:g}", "y2": f"{top + plot_h:g}"})
    ET.SubElement(axis, "line", {"x1": f"{left:g}", "y1": f"{top:g}", "x2": f"{left:g}", "y2": f"{top + plot_h:g}"})
    for frac in (0.0, 0.5, 1.0):
        _text(root, left - 4, top + plot_h * (1 - frac) + 3, f"{ymax * frac:g}", size=9, anchor="end")
    for i, d in enumerate(span):
        if i % max(1, len(span) // 10) == 0:
            _text(root, left + step * i, top + plot_h + 14, d.strftime("%b %d"), size=9)
    for j, term in enumerate(terms):
        color = SERIES_COLORS[j % len(SERIES_COLORS)]
        pts = " ".join(
            f"{left + step * i:.2f},{top + plot_h * (1 - data[i, j] / ymax):.2f}" for i in range(len(span))
        )
        ET.SubElement(root, "polyline", {"class": "term", "data-term": term, "points": pts, "fill": "none", "stroke": color})
        ly = top + 12 * j + 8
        ET.SubElement(root, "rect", {"x": f"{left + plot_w + 12:.1f}", "y": f"{ly - 8:.1f}", "width": "8", "height": "8", "fill": color})
        _text(root, left + plot_w + 24, ly, labels.get(term, term), size=9, anchor="start")
    return _write(root, output)
