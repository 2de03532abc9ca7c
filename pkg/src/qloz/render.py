"""Deterministic SVG output: tilings, descent contours, histograms.

Lozenge geometry: a triangular lattice with horizontal lines at integer heights
t and lattice points at x in Z + t/2.  Entry (k, j) of an interlacing array is a
vertical lozenge whose horizontal diagonal lies on line k, centered at
x = lambda^k_j - j + (k + 1)/2.  The strip between lines k and k+1 is then
forced: runs of free triangles between a fixed down-triangle and the next
fixed up-triangle (or the right wall) pair into right-leaning lozenges, the
opposite runs into left-leaning ones.
"""
from __future__ import annotations

import math

import numpy as np

from .lattice import InterlacingArray

FILLS = {"vertical": "#d95f02", "right": "#7570b3", "left": "#1b9e77"}
H = math.sqrt(3) / 2


def _fmt(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def _poly(points, fill, stroke="#222", width=0.6) -> str:
    pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    return f'<polygon points="{pts}" fill="{fill}" stroke="{stroke}" stroke-width="{width}"/>'


def _svg(width, height, body) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
            f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">')
    return "\n".join([head, *body, "</svg>"]) + "\n"


def tiling_lozenges(array: InterlacingArray, margin: int = 0) -> list[tuple[str, list[tuple[float, float]]]]:
    """Lozenges as ``(kind, vertices)`` in lattice coordinates (x, t).

    The domain is bounded by the lines x = nu_N - t/2 - margin and
    x = nu_1 + t/2 + margin, so it depends only on the top row; ``margin``
    adds frozen columns on both sides.
    """
    N = array.depth
    top = array.top.parts
    centers = {k: [v - j + (k + 1) / 2 for j, v in enumerate(array.row(k).parts, start=1)]
               for k in range(1, N + 1)}
    centers[0] = []
    out = []
    for k in range(1, N + 1):
        for c in centers[k]:
            out.append(("vertical", [(c - 0.5, k), (c, k - 1), (c + 0.5, k), (c, k + 1)]))
    for k in range(N):
        # positions (step 1/2) of fixed triangles in the strip [k, k+1]; the two
        # walls act as up-triangles just outside the domain
        left = top[-1] - k / 2 - 0.5 - margin
        right = top[0] + k / 2 + 0.5 + margin
        fixed = sorted([(p, "up") for p in centers[k] + [left, right]]
                       + [(p, "down") for p in centers[k + 1]])
        for (p0, kind0), (p1, _) in zip(fixed[:-1], fixed[1:]):
            n_pairs = int(round(2 * (p1 - p0) - 1)) // 2
            for i in range(n_pairs):
                a = p0 + 0.5 + i          # first free triangle of the pair
                if kind0 == "down":       # free run starts with an up-triangle at center a
                    out.append(("right", [(a - 0.5, k), (a + 0.5, k), (a + 1, k + 1), (a, k + 1)]))
                else:                     # starts with a down-triangle at center a
                    out.append(("left", [(a, k), (a + 1, k), (a + 0.5, k + 1), (a - 0.5, k + 1)]))
    return out


def render_tiling_svg(array: InterlacingArray, scale: float = 24.0, margin: int = 1) -> str:
    loz = tiling_lozenges(array, margin)
    xs = [x for _, v in loz for x, _ in v]
    ts = [t for _, v in loz for _, t in v]
    x0, x1, t0, t1 = min(xs), max(xs), min(ts), max(ts)
    pad = 0.5
    width = (x1 - x0 + 2 * pad) * scale
    height = (t1 - t0 + 2 * pad) * H * scale
    body = []
    for kind, verts in loz:
        pts = [((x - x0 + pad) * scale, (t1 - t + pad) * H * scale) for x, t in verts]
        body.append(_poly(pts, FILLS[kind]))
    return _svg(width, height, body)


def count_vertical(svg: str) -> int:
    return svg.count(f'fill="{FILLS["vertical"]}"')


def render_contour_svg(grid_re, re_axis, im_axis, S0: float, contour=None, segment=None,
                       size: int = 480) -> str:
    """Shade cells with Re S < S(0); overlay the traced contour and the cut."""
    grid_re = np.asarray(grid_re, dtype=float)
    re_axis, im_axis = np.asarray(re_axis, float), np.asarray(im_axis, float)
    nx, ny = len(re_axis), len(im_axis)
    xr = (re_axis[0], re_axis[-1])
    yr = (im_axis[0], im_axis[-1])
    sx = size / (xr[1] - xr[0])
    sy = size / (yr[1] - yr[0])
    X = lambda x: (x - xr[0]) * sx
    Y = lambda y: (yr[1] - y) * sy
    cw, ch = size / nx, size / ny
    body = [f'<rect x="0" y="0" width="{size}" height="{size}" fill="#ffffff"/>']
    for iy in range(ny):
        for ix in range(nx):
            if np.isfinite(grid_re[iy, ix]) and grid_re[iy, ix] < S0:
                body.append(f'<rect x="{_fmt(ix * cw)}" y="{_fmt((ny - 1 - iy) * ch)}" '
                            f'width="{_fmt(cw)}" height="{_fmt(ch)}" fill="#b3cde3"/>')
    body.append(f'<line x1="0" y1="{_fmt(Y(0))}" x2="{size}" y2="{_fmt(Y(0))}" stroke="#888" stroke-width="0.5"/>')
    body.append(f'<line x1="{_fmt(X(0))}" y1="0" x2="{_fmt(X(0))}" y2="{size}" stroke="#888" stroke-width="0.5"/>')
    if segment is not None:
        body.append(f'<line x1="{_fmt(X(segment[0]))}" y1="{_fmt(Y(0))}" x2="{_fmt(X(segment[1]))}" '
                    f'y2="{_fmt(Y(0))}" stroke="#e41a1c" stroke-width="2"/>')
    if contour is not None and len(contour):
        c = np.asarray(contour, dtype=complex)
        for branch in (c, np.conj(c)):
            pts = " ".join(f"{_fmt(X(z.real))},{_fmt(Y(z.imag))}" for z in branch)
            body.append(f'<polyline points="{pts}" fill="none" stroke="#000" stroke-width="1.2"/>')
    return _svg(size, size, body)


def render_histogram_svg(samples, reference_pdf=None, bins: int = 40, size=(480, 320)) -> str:
    x = np.asarray(samples, dtype=float)
    counts, edges = np.histogram(x, bins=bins)
    dens = counts / (len(x) * np.diff(edges))
    grid = np.linspace(edges[0], edges[-1], 201)
    ref = None if reference_pdf is None else np.asarray(reference_pdf(grid), dtype=float)
    top = max(dens.max(), ref.max() if ref is not None else 0.0) * 1.05 or 1.0
    W, Hh = size
    X = lambda v: (v - edges[0]) / (edges[-1] - edges[0]) * W
    Y = lambda v: Hh - v / top * Hh
    body = [f'<rect x="0" y="0" width="{W}" height="{Hh}" fill="#ffffff"/>']
    for d, a, b in zip(dens, edges[:-1], edges[1:]):
        body.append(f'<rect x="{_fmt(X(a))}" y="{_fmt(Y(d))}" width="{_fmt(X(b) - X(a))}" '
                    f'height="{_fmt(Hh - Y(d))}" fill="#9ecae1" stroke="#3182bd" stroke-width="0.5"/>')
    if ref is not None:
        pts = " ".join(f"{_fmt(X(g))},{_fmt(Y(r))}" for g, r in zip(grid, ref))
        body.append(f'<polyline points="{pts}" fill="none" stroke="#e6550d" stroke-width="1.5"/>')
    return _svg(W, Hh, body)
