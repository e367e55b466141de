"""Dependency-free SVG rendering of paths over the zero level set of ``h``.

Obstacle outlines are traced with marching squares on a regular grid in
the chosen plane.  For 3-D scenes the remaining coordinate is fixed at the
mean of the plotted paths.  Output is deterministic for identical inputs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .sdf import SafetyScene

PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

# marching-squares edge pairs per case; corners (0,0) (1,0) (1,1) (0,1)
# and edges 0 bottom, 1 right, 2 top, 3 left
_CASES = {
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)], 5: [(3, 2), (0, 1)],
    6: [(0, 2)], 7: [(3, 2)], 8: [(2, 3)], 9: [(2, 0)], 10: [(2, 1), (0, 3)],
    11: [(2, 1)], 12: [(1, 3)], 13: [(1, 0)], 14: [(0, 3)],
}


class PlotError(ValueError):
    pass


def plane_axes(plane: str, dim: int):
    if dim == 1:
        raise PlotError("cannot plot 1-D paths")
    if plane not in PLANES:
        raise PlotError(f"unknown plane {plane!r}; choose from {', '.join(PLANES)}")
    axes = PLANES[plane]
    if max(axes) >= dim:
        raise PlotError(f"plane {plane} needs a {max(axes) + 1}-D scene")
    return axes


def zero_contour(values, xs, ys):
    """Line segments ``((x0, y0), (x1, y1))`` where the grid ``values`` cross zero.

    ``values[j, i]`` is sampled at ``(xs[i], ys[j])``; negative is inside.
    """
    segs = []
    inside = values < 0
    for j in range(len(ys) - 1):
        for i in range(len(xs) - 1):
            c = (values[j, i], values[j, i + 1], values[j + 1, i + 1], values[j + 1, i])
            case = (int(inside[j, i]) | int(inside[j, i + 1]) << 1
                    | int(inside[j + 1, i + 1]) << 2 | int(inside[j + 1, i]) << 3)
            if case in (0, 15):
                continue
            x0, x1, y0, y1 = xs[i], xs[i + 1], ys[j], ys[j + 1]

            def point(edge):
                a, b = [(0, 1), (1, 2), (3, 2), (0, 3)][edge]
                t = c[a] / (c[a] - c[b])
                if edge == 0:
                    return (x0 + t * (x1 - x0), y0)
                if edge == 1:
                    return (x1, y0 + t * (y1 - y0))
                if edge == 2:
                    return (x0 + t * (x1 - x0), y1)
                return (x0, y0 + t * (y1 - y0))

            for e1, e2 in _CASES[case]:
                segs.append((point(e1), point(e2)))
    return segs


def render_svg(scene: SafetyScene, paths: dict, plane: str = "xy", size: int = 480,
               resolution: int = 160, title: str = "") -> str:
    """SVG overlay of named ``(T, d)`` paths and the obstacle outlines.

    Parameters
    ----------
    scene : SafetyScene
    paths : dict
        Label to positions; drawn in insertion order.
    plane : {"xy", "xz", "yz"}
    """
    if not paths:
        raise PlotError("nothing to plot")
    dim = scene.dim
    ax0, ax1 = plane_axes(plane, dim)
    pts = np.vstack([np.asarray(p, float).reshape(-1, dim) for p in paths.values()])
    lo = pts[:, [ax0, ax1]].min(axis=0)
    hi = pts[:, [ax0, ax1]].max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-3)
    lo = lo - 0.25 * span
    hi = lo + 1.5 * span

    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.tile(pts.mean(axis=0), (gx.size, 1))
    grid[:, ax0] = gx.ravel()
    grid[:, ax1] = gy.ravel()
    h = scene.h(grid).reshape(gx.shape)

    scale = size / (hi[0] - lo[0])

    def px(x, y):
        return (x - lo[0]) * scale, size - (y - lo[1]) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        out.append(f'<title>{title}</title>')
    segs = zero_contour(h, xs, ys)
    if segs:
        d = " ".join(
            "M{:.2f},{:.2f}L{:.2f},{:.2f}".format(*px(*a), *px(*b)) for a, b in segs
        )
        out.append(f'<path d="{d}" stroke="black" stroke-width="1.5" fill="none"/>')
    for k, (label, p) in enumerate(paths.items()):
        p = np.asarray(p, float).reshape(-1, dim)
        coords = " ".join("{:.2f},{:.2f}".format(*px(q[ax0], q[ax1])) for q in p)
        color = COLORS[k % len(COLORS)]
        out.append(f'<polyline points="{coords}" stroke="{color}" stroke-width="2" fill="none"/>')
        out.append(f'<text x="8" y="{18 + 16 * k}" fill="{color}" font-size="13">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, scene: SafetyScene, paths: dict, **kwargs):
    Path(path).write_text(render_svg(scene, paths, **kwargs))
