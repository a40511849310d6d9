"""Minimal deterministic SVG line plots for the experiment harness.

One polyline per series with a legend; the y axis switches to log scale
automatically when the positive data spans more than three decades.
Output bytes depend only on the input data.
"""

import numpy as np

from .errors import InvalidInput

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#7f7f7f"]
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _fmt(v):
    return f"{v:.6g}"


def _ticks(lo, hi, log):
    if log:
        lo_e = int(np.floor(np.log10(lo)))
        hi_e = int(np.ceil(np.log10(hi)))
        return [10.0**e for e in range(lo_e, hi_e + 1)]
    span = hi - lo
    if span <= 0:
        return [lo]
    step = 10.0 ** np.floor(np.log10(span / 4.0))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= 6:
            step *= mult
            break
    start = np.ceil(lo / step) * step
    return list(np.arange(start, hi + step * 1e-9, step))


def line_plot(series, xlabel, ylabel, path, title=""):
    """Write an SVG with one polyline per named series.

    ``series`` maps name -> (xs, ys).  Log y scale is chosen when
    max/min of the positive values exceeds 1e3.
    """
    if not series:
        raise InvalidInput("line_plot needs at least one series")
    all_x, all_y = [], []
    for name, (xs, ys) in series.items():
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if xs.size == 0 or xs.shape != ys.shape:
            raise InvalidInput(f"series {name!r} is empty or mismatched")
        all_x.append(xs)
        all_y.append(ys)
    ax = np.concatenate(all_x)
    ay = np.concatenate(all_y)
    finite_y = ay[np.isfinite(ay)]
    pos = finite_y[finite_y > 0.0]
    logy = pos.size > 0 and pos.max() / max(pos.min(), 1e-300) > 1e3
    if logy:
        y_lo, y_hi = float(pos.min()), float(pos.max())
    else:
        y_lo = float(finite_y.min()) if finite_y.size else 0.0
        y_hi = float(finite_y.max()) if finite_y.size else 1.0
        if y_lo == y_hi:
            y_lo -= 0.5
            y_hi += 0.5
    x_lo, x_hi = float(ax.min()), float(ax.max())
    if x_lo == x_hi:
        x_lo -= 0.5
        x_hi += 0.5

    def sx(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def sy(y):
        if logy:
            if y <= 0.0:
                return None
            frac = (np.log10(y) - np.log10(y_lo)) / (np.log10(y_hi) - np.log10(y_lo))
        else:
            frac = (y - y_lo) / (y_hi - y_lo)
        return _H - _MB - frac * (_H - _MT - _MB)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{(_ML + _W - _MR) // 2}" y="{_H - 12}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="16" y="{(_MT + _H - _MB) // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {(_MT + _H - _MB) // 2})">'
        f'{ylabel}{" (log)" if logy else ""}</text>',
    ]
    for t in _ticks(x_lo, x_hi, False):
        px = sx(t)
        out.append(
            f'<line x1="{_fmt(px)}" y1="{_H - _MB}" x2="{_fmt(px)}" y2="{_H - _MB + 4}" stroke="black"/>'
        )
        out.append(
            f'<text x="{_fmt(px)}" y="{_H - _MB + 16}" text-anchor="middle" font-size="10">{_fmt(t)}</text>'
        )
    for t in _ticks(y_lo, y_hi, logy):
        py = sy(t)
        if py is None:
            continue
        out.append(
            f'<line x1="{_ML - 4}" y1="{_fmt(py)}" x2="{_ML}" y2="{_fmt(py)}" stroke="black"/>'
        )
        out.append(
            f'<text x="{_ML - 6}" y="{_fmt(py + 3)}" text-anchor="end" font-size="10">{_fmt(t)}</text>'
        )
    for k, (name, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = []
        for x, y in zip(np.asarray(xs, float), np.asarray(ys, float)):
            if not (np.isfinite(x) and np.isfinite(y)):
                continue
            py = sy(y)
            if py is None:
                continue
            pts.append(f"{_fmt(sx(x))},{_fmt(py)}")
        if pts:
            out.append(
                f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
        ly = _MT + 14 + 14 * k
        out.append(
            f'<line x1="{_W - _MR - 110}" y1="{ly - 4}" x2="{_W - _MR - 90}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{_W - _MR - 85}" y="{ly}" font-size="11">{name}</text>'
        )
    out.append("</svg>\n")
    with open(path, "w") as fh:
        fh.write("\n".join(out))
