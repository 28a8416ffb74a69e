"""Minimal self-contained SVG line charts.

Presentational output only: time series and log-log error plots emitted next
to the CSV files.  No plotting dependency; axes get five ticks per side and
series are colored from a fixed palette.
"""

import math

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2")

_W, _H = 720, 460
_ML, _MR, _MT, _MB = 70, 20, 36, 52


def _transform(lo, hi, log):
    if log:
        lo, hi = math.log10(lo), math.log10(hi)
    if hi <= lo:
        hi = lo + 1.0

    def fwd(v):
        return (math.log10(v) if log else v)

    return lo, hi, fwd


def _ticks(lo, hi, log):
    if log:
        first = math.ceil(lo - 1e-9)
        last = math.floor(hi + 1e-9)
        if last >= first:
            return [(p, f"1e{p:d}") for p in range(first, last + 1)][:8]
        return [(lo, f"1e{lo:.1f}"), (hi, f"1e{hi:.1f}")]
    ticks = []
    for i in range(5):
        v = lo + (hi - lo) * i / 4
        ticks.append((v, f"{v:.4g}"))
    return ticks


def line_chart(path, series, title="", xlabel="", ylabel="", logx=False, logy=False):
    """Write an SVG polyline chart.

    ``series`` is a list of (label, xs, ys).  Nonpositive values are dropped
    on log axes; empty series are skipped.
    """
    pts = []
    for _, xs, ys in series:
        for x, y in zip(xs, ys):
            if logx and x <= 0 or logy and y <= 0:
                continue
            if math.isfinite(x) and math.isfinite(y):
                pts.append((x, y))
    if not pts:
        raise ValueError("nothing to plot")
    xlo, xhi, xf = _transform(min(p[0] for p in pts), max(p[0] for p in pts), logx)
    ylo, yhi, yf = _transform(min(p[1] for p in pts), max(p[1] for p in pts), logy)

    def px(x):
        return _ML + (xf(x) - xlo) / (xhi - xlo) * (_W - _ML - _MR)

    def py(y):
        return _H - _MB - (yf(y) - ylo) / (yhi - ylo) * (_H - _MT - _MB)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>']
    # axes
    out.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
               f'stroke="black"/>')
    out.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>')
    for v, label in _ticks(xlo, xhi, logx):
        x = _ML + (v - xlo) / (xhi - xlo) * (_W - _ML - _MR)
        out.append(f'<line x1="{x:.1f}" y1="{_H - _MB}" x2="{x:.1f}" y2="{_H - _MB + 5}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{_H - _MB + 18}" text-anchor="middle">{label}</text>')
    for v, label in _ticks(ylo, yhi, logy):
        y = _H - _MB - (v - ylo) / (yhi - ylo) * (_H - _MT - _MB)
        out.append(f'<line x1="{_ML - 5}" y1="{y:.1f}" x2="{_ML}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8}" y="{y + 4:.1f}" text-anchor="end">{label}</text>')
    if xlabel:
        out.append(f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 14}" '
                   f'text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{(_MT + _H - _MB) / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2})">{ylabel}</text>')
    # series + legend
    ly = _MT + 6
    for idx, (label, xs, ys) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        coords = [(px(x), py(y)) for x, y in zip(xs, ys)
                  if not (logx and x <= 0 or logy and y <= 0)
                  and math.isfinite(x) and math.isfinite(y)]
        if not coords:
            continue
        path_d = " ".join(f"{x:.1f},{y:.1f}" for x, y in coords)
        out.append(f'<polyline points="{path_d}" fill="none" stroke="{color}" '
                   f'stroke-width="1.4"/>')
        out.append(f'<line x1="{_W - _MR - 150}" y1="{ly}" x2="{_W - _MR - 128}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _MR - 122}" y="{ly + 4}">{label}</text>')
        ly += 16
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out))
    return path
