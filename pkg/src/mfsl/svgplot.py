"""Tiny deterministic SVG renderers: line plots and marching-squares contours."""
from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import numpy as np

WIDTH, HEIGHT, MARGIN = 640, 400, 50
N_LEVELS = 20
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _scale(lo: float, hi: float, a: float, b: float):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def _frame(title: str, xlo, xhi, ylo, yhi) -> List[str]:
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" '
           f'height="{HEIGHT - 2 * MARGIN}" fill="none" stroke="black"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="{MARGIN / 2:.1f}" text-anchor="middle" '
                   f'font-size="14">{_escape(title)}</text>')
    out.append(f'<text x="{MARGIN}" y="{HEIGHT - MARGIN / 3:.1f}" font-size="11">{xlo:.4g}</text>')
    out.append(f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN / 3:.1f}" font-size="11" '
               f'text-anchor="end">{xhi:.4g}</text>')
    out.append(f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" font-size="11" '
               f'text-anchor="end">{ylo:.4g}</text>')
    out.append(f'<text x="{MARGIN - 4}" y="{MARGIN + 10}" font-size="11" '
               f'text-anchor="end">{yhi:.4g}</text>')
    return out


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def line_svg(series: Dict[str, Tuple[Sequence[float], Sequence[float]]], title: str = "",
             logy: bool = False) -> str:
    """One polyline per named series ``name -> (x, y)``."""
    if not series:
        raise ValueError("nothing to plot")
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = [np.asarray(y, float) for _, y in series.values()]
    if logy:
        ys = [np.log10(np.maximum(y, 1e-300)) for y in ys]
    yall = np.concatenate(ys)
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(yall.min()), float(yall.max())
    sx = _scale(xlo, xhi, MARGIN, WIDTH - MARGIN)
    sy = _scale(ylo, yhi, HEIGHT - MARGIN, MARGIN)
    out = _frame(title, xlo, xhi, ylo, yhi)
    for k, ((name, (x, _)), y) in enumerate(zip(series.items(), ys)):
        pts = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(np.asarray(x, float), y))
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 4}" y="{MARGIN + 14 + 14 * k}" font-size="11" '
                   f'text-anchor="end" fill="{color}">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# Marching-squares segment table: corner bit order (0,0)=1, (1,0)=2, (1,1)=4, (0,1)=8.
# Edges: 0 bottom (c0-c1), 1 right (c1-c2), 2 top (c3-c2), 3 left (c0-c3).
_CASES = {
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)], 5: [(3, 2), (0, 1)], 6: [(0, 2)],
    7: [(3, 2)], 8: [(2, 3)], 9: [(0, 2)], 10: [(0, 3), (1, 2)], 11: [(1, 2)], 12: [(1, 3)],
    13: [(0, 1)], 14: [(0, 3)],
}


def contour_segments(x: np.ndarray, y: np.ndarray, z: np.ndarray, level: float):
    """Line segments of the ``level`` set of ``z[i, j]`` sampled at ``(x[i], y[j])``."""
    segs = []
    nx, ny = z.shape
    for i in range(nx - 1):
        for j in range(ny - 1):
            c = (z[i, j], z[i + 1, j], z[i + 1, j + 1], z[i, j + 1])
            code = sum(1 << k for k in range(4) if c[k] > level)
            if code in (0, 15):
                continue
            corners = ((x[i], y[j]), (x[i + 1], y[j]), (x[i + 1], y[j + 1]), (x[i], y[j + 1]))
            pairs = ((0, 1), (1, 2), (3, 2), (0, 3))

            def edge_point(e):
                a, b = pairs[e]
                t = (level - c[a]) / (c[b] - c[a])
                pa, pb = corners[a], corners[b]
                return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))

            for e1, e2 in _CASES[code]:
                segs.append((edge_point(e1), edge_point(e2)))
    return segs


def contour_levels(z: np.ndarray, n: int = N_LEVELS) -> List[float]:
    lo, hi = float(np.min(z)), float(np.max(z))
    if not hi > lo:
        return []
    return list(lo + (hi - lo) * (np.arange(1, n + 1) - 0.5) / n)


def contour_svg(x: Sequence[float], y: Sequence[float], z: np.ndarray, title: str = "",
                n_levels: int = N_LEVELS) -> str:
    """Level lines at ``n_levels`` evenly spaced values; a constant field draws none."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    if z.shape != (len(x), len(y)):
        raise ValueError("z must be shaped (len(x), len(y))")
    sx = _scale(float(x.min()), float(x.max()), MARGIN, WIDTH - MARGIN)
    sy = _scale(float(y.min()), float(y.max()), HEIGHT - MARGIN, MARGIN)
    out = _frame(title, float(x.min()), float(x.max()), float(y.min()), float(y.max()))
    levels = contour_levels(z, n_levels)
    zlo, zhi = (levels[0], levels[-1]) if levels else (0.0, 1.0)
    for lev in levels:
        segs = contour_segments(x, y, z, lev)
        if not segs:
            continue
        frac = 0.0 if zhi == zlo else (lev - zlo) / (zhi - zlo)
        color = f"rgb({int(255 * frac)},0,{int(255 * (1 - frac))})"
        d = " ".join(f"M{_fmt(sx(a[0]))},{_fmt(sy(a[1]))}L{_fmt(sx(b[0]))},{_fmt(sy(b[1]))}"
                     for a, b in segs)
        out.append(f'<path fill="none" stroke="{color}" stroke-width="1" d="{d}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def grid_from_long(xs: Sequence[float], ys: Sequence[float], vals: Sequence[float]):
    """Rebuild (x, y, z) from long-format rows."""
    ux = np.unique(np.asarray(xs, float))
    uy = np.unique(np.asarray(ys, float))
    z = np.full((len(ux), len(uy)), np.nan)
    ix = np.searchsorted(ux, xs)
    iy = np.searchsorted(uy, ys)
    z[ix, iy] = vals
    if np.isnan(z).any():
        raise ValueError("contour CSV does not cover a full tensor grid")
    return ux, uy, z
