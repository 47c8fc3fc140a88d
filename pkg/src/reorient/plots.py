"""Dependency-free SVG learning-curve plots.

Output is a pure function of the metrics rows: fixed canvas geometry,
fixed-precision coordinates, no timestamps — the same input always renders
byte-identical files.  Each per-seed series draws as a faint line with
point markers; an across-seed mean overlays in full strength.
"""

import os

from .metrics import read_metrics

PANEL_W = 640
PANEL_H = 300
MARGIN_L = 62
MARGIN_R = 16
MARGIN_T = 34
MARGIN_B = 42
SERIES_COLOR = "#8fb2d9"
MEAN_COLOR = "#1f4e8c"
N_TICKS = 5


def _fmt(v):
    return f"{float(v):.4f}"


def _fmt_tick(v):
    return f"{float(v):.6g}"


def _limits(values, pad_frac=0.05):
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    pad = (hi - lo) * pad_frac
    return lo - pad, hi + pad


class _Panel:
    """One titled x/y plot area; collects SVG fragments."""

    def __init__(self, title, xlabel, ylabel, x_off, y_off):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.x_off = x_off
        self.y_off = y_off
        self.series = []

    def add_series(self, xs, ys, color, width, opacity):
        self.series.append((list(xs), list(ys), color, width, opacity))

    def _tx(self, x, xlim):
        inner = PANEL_W - MARGIN_L - MARGIN_R
        return MARGIN_L + (x - xlim[0]) / (xlim[1] - xlim[0]) * inner

    def _ty(self, y, ylim):
        inner = PANEL_H - MARGIN_T - MARGIN_B
        return PANEL_H - MARGIN_B - (y - ylim[0]) / (ylim[1] - ylim[0]) * inner

    def render(self):
        all_x = [x for xs, *_ in self.series for x in xs]
        all_y = [y for _, ys, *_ in self.series for y in ys]
        xlim = _limits(all_x)
        ylim = _limits(all_y)
        out = [f'<g transform="translate({self.x_off},{self.y_off})">']
        out.append(
            f'<rect x="{MARGIN_L}" y="{MARGIN_T}" '
            f'width="{PANEL_W - MARGIN_L - MARGIN_R}" '
            f'height="{PANEL_H - MARGIN_T - MARGIN_B}" '
            'fill="none" stroke="#444444" stroke-width="1"/>')
        out.append(
            f'<text x="{PANEL_W // 2}" y="{MARGIN_T - 12}" text-anchor="middle" '
            f'font-family="monospace" font-size="14">{self.title}</text>')
        out.append(
            f'<text x="{PANEL_W // 2}" y="{PANEL_H - 8}" text-anchor="middle" '
            f'font-family="monospace" font-size="12">{self.xlabel}</text>')
        out.append(
            f'<text x="14" y="{PANEL_H // 2}" text-anchor="middle" '
            f'font-family="monospace" font-size="12" '
            f'transform="rotate(-90 14 {PANEL_H // 2})">{self.ylabel}</text>')
        for i in range(N_TICKS):
            fx = xlim[0] + (xlim[1] - xlim[0]) * i / (N_TICKS - 1)
            fy = ylim[0] + (ylim[1] - ylim[0]) * i / (N_TICKS - 1)
            px = self._tx(fx, xlim)
            py = self._ty(fy, ylim)
            out.append(
                f'<line x1="{_fmt(px)}" y1="{PANEL_H - MARGIN_B}" '
                f'x2="{_fmt(px)}" y2="{PANEL_H - MARGIN_B + 4}" '
                'stroke="#444444" stroke-width="1"/>')
            out.append(
                f'<text x="{_fmt(px)}" y="{PANEL_H - MARGIN_B + 16}" '
                'text-anchor="middle" font-family="monospace" font-size="10">'
                f'{_fmt_tick(fx)}</text>')
            out.append(
                f'<line x1="{MARGIN_L - 4}" y1="{_fmt(py)}" x2="{MARGIN_L}" '
                f'y2="{_fmt(py)}" stroke="#444444" stroke-width="1"/>')
            out.append(
                f'<text x="{MARGIN_L - 7}" y="{_fmt(py + 3)}" text-anchor="end" '
                f'font-family="monospace" font-size="10">{_fmt_tick(fy)}</text>')
        for xs, ys, color, width, opacity in self.series:
            pts = [(self._tx(x, xlim), self._ty(y, ylim))
                   for x, y in zip(xs, ys)]
            if len(pts) > 1:
                path = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in pts)
                out.append(
                    f'<polyline points="{path}" fill="none" stroke="{color}" '
                    f'stroke-width="{width}" stroke-opacity="{opacity}"/>')
            for px, py in pts:
                out.append(
                    f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="2.5" '
                    f'fill="{color}" fill-opacity="{opacity}"/>')
        out.append("</g>")
        return "\n".join(out)


def _document(panels, width, height):
    body = "\n".join(p.render() for p in panels)
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>\n'
        f"{body}\n</svg>\n")


def _series_from_rows(rows_per_run, x_key, y_key):
    """Per-run (xs, ys) lists, keeping only rows that carry both keys."""
    series = []
    for rows in rows_per_run:
        xs, ys = [], []
        for r in rows:
            if x_key in r and y_key in r and r[y_key] is not None:
                xs.append(float(r[x_key]))
                ys.append(float(r[y_key]))
        series.append((xs, ys))
    return series


def _mean_series(series):
    n = min(len(xs) for xs, _ in series)
    if n == 0:
        return [], []
    xs0 = series[0][0][:n]
    for xs, _ in series[1:]:
        if xs[:n] != xs0:
            raise ValueError("metrics runs are not step-aligned; cannot average")
    mean = [sum(ys[i] for _, ys in series) / len(series) for i in range(n)]
    return xs0, mean


def _panel_from_series(title, xlabel, ylabel, series, x_off, y_off):
    panel = _Panel(title, xlabel, ylabel, x_off, y_off)
    multi = len(series) > 1
    for xs, ys in series:
        if xs:
            panel.add_series(xs, ys, SERIES_COLOR if multi else MEAN_COLOR,
                             1.5, "0.8" if multi else "1.0")
    if multi:
        mx, my = _mean_series([s for s in series if s[0]])
        if mx:
            panel.add_series(mx, my, MEAN_COLOR, 2.5, "1.0")
    if not panel.series:
        raise ValueError(f"no data for panel {title!r}")
    return panel


def emit_plots(metrics_paths, out_dir):
    """Render learning curves and the gravity trace; returns written paths.

    `metrics_paths`: one JSONL file per seed/run.  Raises if no file,
    no rows, or runs that cannot be aligned for the mean line.
    """
    paths = [str(p) for p in metrics_paths]
    if not paths:
        raise ValueError("emit_plots needs at least one metrics file")
    rows_per_run = [read_metrics(p) for p in paths]
    if all(not rows for rows in rows_per_run):
        raise ValueError("metrics files contain no rows")

    os.makedirs(out_dir, exist_ok=True)
    written = []

    candidates = [
        ("success rate", "success",
         _series_from_rows(rows_per_run, "env_steps", "success_rate")),
        ("mean episode return", "return",
         _series_from_rows(rows_per_run, "env_steps", "mean_return")),
        ("distillation loss", "kl",
         _series_from_rows(rows_per_run, "env_steps", "kl")),
    ]
    panels = []
    for title, ylabel, series in candidates:
        if any(xs for xs, _ in series):
            panels.append(_panel_from_series(title, "env steps", ylabel,
                                             series, 0, len(panels) * PANEL_H))
    if not panels:
        raise ValueError("metrics files contain no plottable series")
    curves = os.path.join(out_dir, "learning_curves.svg")
    with open(curves, "w") as f:
        f.write(_document(panels, PANEL_W, len(panels) * PANEL_H))
    written.append(curves)

    gravity = _series_from_rows(rows_per_run, "env_steps", "gravity")
    if any(xs for xs, _ in gravity):
        gpanel = _panel_from_series("gravity curriculum", "env steps",
                                    "g (m/s^2)", gravity, 0, 0)
        gpath = os.path.join(out_dir, "gravity_trace.svg")
        with open(gpath, "w") as f:
            f.write(_document([gpanel], PANEL_W, PANEL_H))
        written.append(gpath)
    return written
