"""Minimal SVG XY line plots (time vs calibrated value)."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET

import numpy as np

WIDTH, HEIGHT = 800, 500
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 90, 30, 40, 60


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo
    raw = span / max(n, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def _range(values: np.ndarray) -> tuple[float, float]:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return 0.0, 1.0
    lo, hi = float(finite.min()), float(finite.max())
    if lo == hi:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    return lo, hi


def _segments(x: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    """Split at non-finite points so faulted stretches show as breaks."""
    ok = np.isfinite(x) & np.isfinite(y)
    segs, start = [], None
    for i, good in enumerate(ok.tolist() + [False]):
        if good and start is None:
            start = i
        elif not good and start is not None:
            segs.append(np.arange(start, i))
            start = None
    return segs


def render_svg(records, title: str = "", x_label: str = "time [s]", y_label: str = "") -> str:
    rec = np.asarray(records, dtype=np.float64).reshape(-1, 3)
    x, y = rec[:, 0], rec[:, 2]
    x0, x1 = _range(x)
    y0, y1 = _range(y)
    pw, ph = WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B

    def sx(v):
        return MARGIN_L + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN_T + ph - (v - y0) / (y1 - y0) * ph

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(WIDTH), height=str(HEIGHT),
                     viewBox=f"0 0 {WIDTH} {HEIGHT}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(WIDTH), height=str(HEIGHT), fill="white")
    if title:
        t = ET.SubElement(svg, "text", x=str(WIDTH / 2), y="24", attrib={"text-anchor": "middle"})
        t.text = title
    axes = ET.SubElement(svg, "g", attrib={"class": "axes", "stroke": "black", "fill": "none"})
    ET.SubElement(axes, "rect", x=str(MARGIN_L), y=str(MARGIN_T), width=str(pw), height=str(ph))
    labels = ET.SubElement(svg, "g", attrib={"class": "ticks", "font-size": "12", "font-family": "sans-serif"})
    for v in nice_ticks(x0, x1):
        px = sx(v)
        ET.SubElement(axes, "line", x1=f"{px:.2f}", y1=str(MARGIN_T + ph), x2=f"{px:.2f}", y2=str(MARGIN_T + ph + 5))
        lab = ET.SubElement(labels, "text", x=f"{px:.2f}", y=str(MARGIN_T + ph + 20),
                            attrib={"text-anchor": "middle"})
        lab.text = f"{v:.6g}"
    for v in nice_ticks(y0, y1):
        py = sy(v)
        ET.SubElement(axes, "line", x1=str(MARGIN_L - 5), y1=f"{py:.2f}", x2=str(MARGIN_L), y2=f"{py:.2f}")
        lab = ET.SubElement(labels, "text", x=str(MARGIN_L - 8), y=f"{py + 4:.2f}", attrib={"text-anchor": "end"})
        lab.text = f"{v:.6g}"
    xl = ET.SubElement(svg, "text", x=str(MARGIN_L + pw / 2), y=str(HEIGHT - 15),
                       attrib={"text-anchor": "middle", "class": "xlabel"})
    xl.text = x_label
    yl = ET.SubElement(svg, "text", x="20", y=str(MARGIN_T + ph / 2),
                       attrib={"text-anchor": "middle", "class": "ylabel",
                               "transform": f"rotate(-90 20 {MARGIN_T + ph / 2})"})
    yl.text = y_label
    for seg in _segments(x, y):
        pts = " ".join(f"{sx(a):.3f},{sy(b):.3f}" for a, b in zip(x[seg].tolist(), y[seg].tolist()))
        ET.SubElement(svg, "polyline", points=pts, fill="none", stroke="#1f77b4",
                      attrib={"stroke-width": "1.5"})
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode") + "\n"
