"""Deterministic SVG rendering for traces, point clouds, grids, and graphs.

Output is a pure function of the plot spec: no timestamps, no generated
ids, every number printed with 6 significant digits. Each payload datum
becomes exactly one element carrying a known class (``vertex``, ``pt``,
``cell``, ``on``, ``node``) so tests can count them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

log = logging.getLogger(__name__)

KINDS = ("line", "scatter2d", "heatmap", "recurrence", "graph", "loglog")
CATEGORICAL = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)
RAMPS = {
    "blues": ((247, 251, 255), (8, 48, 107)),
    "gray": ((255, 255, 255), (0, 0, 0)),
    "heat": ((255, 255, 204), (189, 0, 38)),
}
MARGIN = (70, 20, 40, 55)  # left, right, top, bottom
# log axes draw values <= 0 at LOG_FLOOR_FACTOR times the smallest positive value
LOG_FLOOR_FACTOR = 0.5


def fmt(v: float) -> str:
    s = f"{float(v):.6g}"
    return "0" if s == "-0" else s


@dataclass
class PlotSpec:
    """What to draw.

    ``payload`` by kind:
      line       -- list of (label, xs, ys)
      scatter2d  -- list of (label, points[N, 2 or 3]); 3-D clouds become xy/xz/yz panels
      heatmap    -- 2-D array of values
      recurrence -- 2-D 0/1 array
      graph      -- (edges [(a, b, w)], positions[n, 2], node_sizes[n], communities[n] or None)
      loglog     -- list of (label, [(x, y), ...])
    """

    kind: str
    payload: Any
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 640
    height: int = 480
    palette: str = "blues"
    logx: bool = False
    logy: bool = False
    value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown plot kind {self.kind!r}; expected one of {KINDS}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("width and height must be positive")


class _Svg:
    def __init__(self, width: float, height: float) -> None:
        self.width, self.height = width, height
        self.parts: list[str] = []

    def el(self, tag: str, text: str | None = None, **attrs: Any) -> None:
        a = "".join(
            f" {k.rstrip('_').replace('_', '-')}={quoteattr(fmt(v) if isinstance(v, (int, float, np.floating, np.integer)) else str(v))}"
            for k, v in attrs.items()
            if v is not None
        )
        if text is None:
            self.parts.append(f"<{tag}{a}/>")
        else:
            self.parts.append(f"<{tag}{a}>{escape(text)}</{tag}>")

    def raw(self, s: str) -> None:
        self.parts.append(s)

    def document(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{fmt(self.width)}" '
            f'height="{fmt(self.height)}" viewBox="0 0 {fmt(self.width)} {fmt(self.height)}" '
            'font-family="sans-serif" font-size="11">'
        )
        return "\n".join([head, *self.parts, "</svg>"]) + "\n"


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        raise ValueError(f"non-finite value in {what} at index {tuple(int(i) for i in bad[0])}")


@dataclass
class _Axis:
    lo: float
    hi: float
    start: float
    length: float
    log: bool = False
    flip: bool = False

    def __post_init__(self) -> None:
        if self.log:
            self.lo, self.hi = math.log10(self.lo), math.log10(self.hi)
        if self.hi <= self.lo:
            pad = 0.5 if self.hi == 0 else abs(self.hi) * 0.05
            self.lo, self.hi = self.lo - pad, self.hi + pad

    def __call__(self, v: float) -> float:
        if self.log:
            v = math.log10(v)
        t = (v - self.lo) / (self.hi - self.lo)
        return self.start + (1.0 - t if self.flip else t) * self.length

    def ticks(self, count: int = 5) -> list[float]:
        if self.log:
            a, b = math.floor(self.lo), math.ceil(self.hi)
            return [10.0**e for e in range(a, b + 1) if self.lo - 1e-9 <= e <= self.hi + 1e-9]
        return [self.lo + (self.hi - self.lo) * k / (count - 1) for k in range(count)]


def _frame(svg: _Svg, spec: PlotSpec, x0: float, y0: float, w: float, h: float, ax: _Axis, ay: _Axis) -> None:
    svg.el("rect", x=x0, y=y0, width=w, height=h, fill="none", stroke="#333333", class_="frame")
    for t in ax.ticks():
        px = ax(t)
        svg.el("line", x1=px, y1=y0 + h, x2=px, y2=y0 + h + 4, stroke="#333333", class_="tick")
        svg.el("text", fmt(t), x=px, y=y0 + h + 16, text_anchor="middle", class_="ticklabel")
    for t in ay.ticks():
        py = ay(t)
        svg.el("line", x1=x0 - 4, y1=py, x2=x0, y2=py, stroke="#333333", class_="tick")
        svg.el("text", fmt(t), x=x0 - 6, y=py + 4, text_anchor="end", class_="ticklabel")
    if spec.xlabel:
        svg.el("text", spec.xlabel, x=x0 + w / 2, y=y0 + h + 34, text_anchor="middle", class_="axislabel")
    if spec.ylabel:
        svg.el(
            "text", spec.ylabel, x=x0 - 50, y=y0 + h / 2, text_anchor="middle",
            transform=f"rotate(-90 {fmt(x0 - 50)} {fmt(y0 + h / 2)})", class_="axislabel",
        )


def _title(svg: _Svg, spec: PlotSpec) -> None:
    if spec.title:
        svg.el("text", spec.title, x=spec.width / 2, y=18, text_anchor="middle", font_size=14, class_="title")


def _legend(svg: _Svg, labels: Sequence[str], x: float, y: float) -> None:
    for k, label in enumerate(labels):
        color = CATEGORICAL[k % len(CATEGORICAL)]
        svg.el("rect", x=x, y=y + 14 * k, width=10, height=10, fill=color, class_="swatch")
        svg.el("text", label, x=x + 14, y=y + 14 * k + 9, class_="legend")


def _plot_box(spec: PlotSpec, legend: bool) -> tuple[float, float, float, float]:
    left, right, top, bottom = MARGIN
    if legend:
        right += 110
    return left, top, spec.width - left - right, spec.height - top - bottom


def _render_line(spec: PlotSpec) -> str:
    series = [(str(lab), np.asarray(xs, float), np.asarray(ys, float)) for lab, xs, ys in spec.payload]
    if not series or any(len(xs) == 0 for _, xs, _ in series):
        raise ValueError("empty line payload")
    for k, (lab, xs, ys) in enumerate(series):
        if len(xs) != len(ys):
            raise ValueError(f"series {k} has {len(xs)} xs but {len(ys)} ys")
        _check_finite(xs, f"series {k} xs")
        _check_finite(ys, f"series {k} ys")
    allx = np.concatenate([s[1] for s in series])
    ally = np.concatenate([s[2] for s in series])
    x0, y0, w, h = _plot_box(spec, legend=True)
    ax = _Axis(float(allx.min()), float(allx.max()), x0, w, spec.logx)
    ay = _Axis(float(ally.min()), float(ally.max()), y0, h, spec.logy, flip=True)
    svg = _Svg(spec.width, spec.height)
    _title(svg, spec)
    _frame(svg, spec, x0, y0, w, h, ax, ay)
    for k, (lab, xs, ys) in enumerate(series):
        color = CATEGORICAL[k % len(CATEGORICAL)]
        pts = " ".join(f"{fmt(ax(x))},{fmt(ay(y))}" for x, y in zip(xs, ys))
        svg.el("polyline", points=pts, fill="none", stroke=color, stroke_width=1.5, class_="series")
        for x, y in zip(xs, ys):
            svg.el("circle", cx=ax(x), cy=ay(y), r=2.5, fill=color, class_="vertex")
    _legend(svg, [s[0] for s in series], x0 + w + 10, y0)
    return svg.document()


def _render_scatter(spec: PlotSpec) -> str:
    clouds = [(str(lab), np.asarray(p, float)) for lab, p in spec.payload]
    if not clouds or any(p.size == 0 for _, p in clouds):
        raise ValueError("empty scatter payload")
    dims = {p.shape[1] for _, p in clouds}
    if len(dims) != 1 or dims.pop() not in (2, 3):
        raise ValueError("scatter clouds must all be 2-D or all 3-D")
    for k, (_, p) in enumerate(clouds):
        _check_finite(p, f"cloud {k}")
    panels = [(0, 1)] if clouds[0][1].shape[1] == 2 else [(0, 1), (0, 2), (1, 2)]
    names = "xyz"
    svg = _Svg(spec.width, spec.height)
    _title(svg, spec)
    x0, y0, w, h = _plot_box(spec, legend=True)
    gap = 50.0
    pw = (w - gap * (len(panels) - 1)) / len(panels)
    allp = np.concatenate([p for _, p in clouds])
    for k, (a, b) in enumerate(panels):
        px0 = x0 + k * (pw + gap)
        ax = _Axis(float(allp[:, a].min()), float(allp[:, a].max()), px0, pw)
        ay = _Axis(float(allp[:, b].min()), float(allp[:, b].max()), y0, h, flip=True)
        sub = PlotSpec(
            "scatter2d", None,
            xlabel=spec.xlabel if len(panels) == 1 else f"{names[a]} ({spec.xlabel or 'MAE'})",
            ylabel=spec.ylabel if len(panels) == 1 else f"{names[b]}",
        )
        _frame(svg, sub, px0, y0, pw, h, ax, ay)
        for c, (_, p) in enumerate(clouds):
            color = CATEGORICAL[c % len(CATEGORICAL)]
            for row in p:
                svg.el("circle", cx=ax(row[a]), cy=ay(row[b]), r=2.5, fill=color, fill_opacity=0.8, class_="pt")
    _legend(svg, [lab for lab, _ in clouds], x0 + w + 10, y0)
    return svg.document()


def ramp_color(value: float, lo: float, hi: float, palette: str = "blues") -> str:
    """Hex color of ``value`` on a linear two-stop ramp over [lo, hi]."""
    (r0, g0, b0), (r1, g1, b1) = RAMPS[palette]
    t = 0.0 if hi <= lo else min(max((value - lo) / (hi - lo), 0.0), 1.0)
    return "#{:02x}{:02x}{:02x}".format(
        int(round(r0 + t * (r1 - r0))), int(round(g0 + t * (g1 - g0))), int(round(b0 + t * (b1 - b0)))
    )


def _as_grid(payload: Any) -> np.ndarray:
    if isinstance(payload, np.ndarray):
        grid = payload.astype(float)
    else:
        rows = [list(r) for r in payload]
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("ragged or empty grid")
        grid = np.array(rows, dtype=float)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("grid must be a non-empty 2-D array")
    return grid


def render_heatmap(grid: Any, spec: PlotSpec | None = None) -> str:
    """One rect per cell, colored on the PlotSpec palette over ``value_range``."""
    spec = spec or PlotSpec("heatmap", grid)
    g = _as_grid(grid)
    _check_finite(g, "heatmap grid")
    lo, hi = spec.value_range
    if (g < lo).any() or (g > hi).any():
        log.warning("heatmap values outside [%g, %g] clamped", lo, hi)
    rows, cols = g.shape
    x0, y0, w, h = _plot_box(spec, legend=True)
    cw, ch = w / cols, h / rows
    svg = _Svg(spec.width, spec.height)
    _title(svg, spec)
    for r in range(rows):
        for c in range(cols):
            svg.el(
                "rect", x=x0 + c * cw, y=y0 + r * ch, width=cw, height=ch,
                fill=ramp_color(g[r, c], lo, hi, spec.palette), class_="cell",
            )
    svg.el("rect", x=x0, y=y0, width=w, height=h, fill="none", stroke="#333333", class_="frame")
    if spec.xlabel:
        svg.el("text", spec.xlabel, x=x0 + w / 2, y=y0 + h + 20, text_anchor="middle", class_="axislabel")
    # color legend
    lx, steps = x0 + w + 20, 10
    for k in range(steps + 1):
        v = hi - (hi - lo) * k / steps
        svg.el("rect", x=lx, y=y0 + k * 14, width=14, height=14, fill=ramp_color(v, lo, hi, spec.palette), class_="ramp")
        if k % 5 == 0:
            svg.el("text", fmt(v), x=lx + 18, y=y0 + k * 14 + 11, class_="legend")
    return svg.document()


def _render_recurrence(spec: PlotSpec) -> str:
    bits = _as_grid(spec.payload)
    n = bits.shape[0]
    if bits.shape != (n, n):
        raise ValueError("recurrence grid must be square")
    left, right, top, bottom = MARGIN
    side = min(spec.width - left - right, spec.height - top - bottom)
    cell = side / n
    svg = _Svg(spec.width, spec.height)
    _title(svg, spec)
    svg.el("rect", x=left, y=top, width=side, height=side, fill="#ffffff", stroke="#333333", class_="frame")
    on = ramp_color(1.0, 0.0, 1.0, "gray")
    for r in range(n):
        for c in range(n):
            if bits[r, c]:
                svg.el("rect", x=left + c * cell, y=top + r * cell, width=cell, height=cell, fill=on, class_="on")
    svg.el("text", spec.xlabel or "index", x=left + side / 2, y=top + side + 20, text_anchor="middle", class_="axislabel")
    return svg.document()


def _render_graph(spec: PlotSpec) -> str:
    edges, positions, sizes, communities = spec.payload
    pos = np.asarray(positions, float)
    if pos.size == 0:
        raise ValueError("graph has no nodes")
    _check_finite(pos, "node positions")
    sizes = np.asarray(sizes, float)
    x0, y0, w, h = _plot_box(spec, legend=False)
    ax = _Axis(float(pos[:, 0].min()), float(pos[:, 0].max()), x0 + 10, w - 20)
    ay = _Axis(float(pos[:, 1].min()), float(pos[:, 1].max()), y0 + 10, h - 20, flip=True)
    svg = _Svg(spec.width, spec.height)
    _title(svg, spec)
    for a, b, wgt in edges:
        svg.el(
            "line", x1=ax(pos[a, 0]), y1=ay(pos[a, 1]), x2=ax(pos[b, 0]), y2=ay(pos[b, 1]),
            stroke="#999999", stroke_opacity=0.15 + 0.5 * float(wgt), stroke_width=0.6, class_="edge",
        )
    smax = float(sizes.max()) if sizes.size and sizes.max() > 0 else 1.0
    for u in range(len(pos)):
        color = CATEGORICAL[int(communities[u]) % len(CATEGORICAL)] if communities is not None else CATEGORICAL[0]
        svg.el(
            "circle", cx=ax(pos[u, 0]), cy=ay(pos[u, 1]), r=2.0 + 6.0 * math.sqrt(max(sizes[u], 0.0) / smax),
            fill=color, stroke="#ffffff", stroke_width=0.5, class_="node",
        )
    return svg.document()


def _render_loglog(spec: PlotSpec) -> str:
    series = [(str(lab), np.asarray(pairs, float).reshape(-1, 2)) for lab, pairs in spec.payload]
    if not series or any(len(p) == 0 for _, p in series):
        raise ValueError("empty log-log payload")
    for k, (_, p) in enumerate(series):
        _check_finite(p, f"series {k}")
    allp = np.concatenate([p for _, p in series])
    floors = []
    for axis in (0, 1):
        pos = allp[:, axis][allp[:, axis] > 0]
        floors.append(LOG_FLOOR_FACTOR * float(pos.min()) if len(pos) else 1.0)
    clamp = [np.where(p > 0, p, np.array(floors)) for _, p in series]
    allc = np.concatenate(clamp)
    x0, y0, w, h = _plot_box(spec, legend=True)
    ax = _Axis(float(allc[:, 0].min()), float(allc[:, 0].max()), x0, w, log=True)
    ay = _Axis(float(allc[:, 1].min()), float(allc[:, 1].max()), y0, h, log=True, flip=True)
    svg = _Svg(spec.width, spec.height)
    _title(svg, spec)
    _frame(svg, spec, x0, y0, w, h, ax, ay)
    floored = False
    for k, ((lab, p), c) in enumerate(zip(series, clamp)):
        color = CATEGORICAL[k % len(CATEGORICAL)]
        for raw, (x, y) in zip(p, c):
            if (raw > 0).all():
                svg.el("circle", cx=ax(x), cy=ay(y), r=2.5, fill=color, class_="pt")
            else:
                floored = True
                svg.el("rect", x=ax(x) - 3, y=ay(y) - 3, width=6, height=6, fill="none", stroke=color, class_="pt floor")
    if floored:
        svg.el(
            "text", f"squares: values <= 0 drawn at {fmt(LOG_FLOOR_FACTOR)} x smallest positive",
            x=x0 + 4, y=y0 + h - 6, class_="annotation",
        )
    _legend(svg, [lab for lab, _ in series], x0 + w + 10, y0)
    return svg.document()


def render(spec: PlotSpec) -> str:
    if spec.payload is None:
        raise ValueError("empty payload")
    if spec.kind == "line":
        return _render_line(spec)
    if spec.kind == "scatter2d":
        return _render_scatter(spec)
    if spec.kind == "heatmap":
        return render_heatmap(spec.payload, spec)
    if spec.kind == "recurrence":
        return _render_recurrence(spec)
    if spec.kind == "graph":
        return _render_graph(spec)
    return _render_loglog(spec)


def save(svg: str, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    return path


def plot_name(dataset: str, analysis: str, algo: str) -> str:
    return f"{dataset}_{analysis}_{algo}.svg"
