"""Minimal SVG map: workspace, obstacles, inflated obstacles, nominal path with tube band, actual paths."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pts(xy: np.ndarray, H: float) -> str:
    return " ".join(f"{x:.2f},{H - y:.2f}" for x, y in xy)


def render_map(
    workspace,
    obstacles,
    inflated=(),
    nominal: np.ndarray | None = None,
    tube_radius: float = 0.0,
    actual=(),
    start=None,
    goal=None,
) -> str:
    """Return an SVG document in world metres (y pointing up)."""
    x0, y0 = workspace.lower[:2]
    x1, y1 = workspace.upper[:2]
    W, H = x1 - x0, y1 - y0
    sw = max(W, H) / 500.0

    def shift(a):
        return np.asarray(a, dtype=float)[:, :2] - (x0, y0)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W:.2f} {H:.2f}" width="800" '
        f'height="{800 * H / W:.0f}">',
        f'<rect x="0" y="0" width="{W:.2f}" height="{H:.2f}" fill="#eef5fb" stroke="#333" stroke-width="{sw:.2f}"/>',
    ]
    for poly in inflated:
        out.append(f'<polygon points="{_pts(shift(poly), H)}" fill="none" stroke="#c0392b" '
                   f'stroke-dasharray="{4 * sw:.2f}" stroke-width="{sw:.2f}"/>')
    for poly in obstacles:
        out.append(f'<polygon points="{_pts(shift(poly), H)}" fill="#7f8c8d" stroke="#2c3e50" '
                   f'stroke-width="{sw:.2f}"/>')
    if nominal is not None and len(nominal) > 1:
        p = _pts(shift(nominal), H)
        if tube_radius > 0:
            out.append(f'<polyline points="{p}" fill="none" stroke="#3498db" stroke-opacity="0.25" '
                       f'stroke-linejoin="round" stroke-linecap="round" stroke-width="{2 * tube_radius:.2f}"/>')
        out.append(f'<polyline points="{p}" fill="none" stroke="#1f4e79" stroke-width="{1.5 * sw:.2f}"/>')
    for path in actual:
        out.append(f'<polyline points="{_pts(shift(path), H)}" fill="none" stroke="#e67e22" '
                   f'stroke-opacity="0.6" stroke-width="{sw:.2f}"/>')
    for pt, colour in ((start, "#27ae60"), (goal, "#8e44ad")):
        if pt is not None:
            cx, cy = pt[0] - x0, H - (pt[1] - y0)
            out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{4 * sw:.2f}" fill="{colour}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_map(path: str | Path, **kw) -> None:
    Path(path).write_text(render_map(**kw))
