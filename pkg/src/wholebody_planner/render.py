"""SVG rendering of a planning run: map, search path, corridor, trajectory, footprints."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .corridor import CorridorSegment
from .geometry import RobotShape, transform_points
from .gridmap import OccupancyGrid
from .minco import MincoTrajectory
from .search import PathResult


@dataclass(frozen=True)
class PageTransform:
    """World meters to SVG pixels; y is flipped so that world up is page up."""

    xmin: float
    ymax: float
    scale: float
    margin: float

    def apply(self, pts: ArrayLike) -> NDArray[np.float64]:
        pts = np.asarray(pts, dtype=float)
        px = (pts[..., 0] - self.xmin) * self.scale + self.margin
        py = (self.ymax - pts[..., 1]) * self.scale + self.margin
        return np.stack([px, py], axis=-1)


def footprint_times(duration: float, interval: float) -> NDArray[np.float64]:
    """``k * interval`` for ``k = 0 .. floor(duration / interval)``."""
    if not interval > 0:
        raise ValueError("footprint interval must be positive")
    n = int(math.floor(duration / interval + 1e-9))
    return np.arange(n + 1) * interval


def _bounds(grid, path, corridor, traj):
    if grid is not None:
        return grid.extent
    pts = []
    if path is not None:
        pts.append(path.dense_states(4)[1][:, :2])
    if corridor:
        pts.extend(seg.polygon.vertices() for seg in corridor)
    if traj is not None:
        pts.append(traj.eval(traj.sample_times(max(traj.duration / 200, 1e-3)), 0)[:, :2])
    if not pts:
        return (0.0, 0.0, 1.0, 1.0)
    allp = np.concatenate(pts)
    lo, hi = allp.min(axis=0) - 0.5, allp.max(axis=0) + 0.5
    return (lo[0], lo[1], hi[0], hi[1])


def _points_attr(page_pts: NDArray) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in page_pts)


def render_svg(
    grid: OccupancyGrid | None = None,
    path: PathResult | None = None,
    corridor: list[CorridorSegment] | None = None,
    traj: MincoTrajectory | None = None,
    shape: RobotShape | None = None,
    footprint_interval: float = 0.5,
    width_px: float = 800.0,
    margin: float = 10.0,
) -> str:
    """SVG document with whichever layers are given.

    Footprints are drawn at ``k * footprint_interval`` along ``traj`` and
    need ``shape``.
    """
    xmin, ymin, xmax, ymax = _bounds(grid, path, corridor, traj)
    span_x, span_y = max(xmax - xmin, 1e-9), max(ymax - ymin, 1e-9)
    scale = width_px / span_x
    page = PageTransform(xmin, ymax, scale, margin)
    w = span_x * scale + 2 * margin
    h = span_y * scale + 2 * margin
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.2f} {h:.2f}">',
        f'<rect id="frame" x="{margin:.2f}" y="{margin:.2f}" width="{span_x * scale:.2f}" '
        f'height="{span_y * scale:.2f}" fill="white" stroke="black" stroke-width="1"/>',
    ]
    if grid is not None and grid.cells.any():
        res = grid.resolution
        out.append('<g id="obstacles" fill="#333">')
        for j, row in enumerate(grid.cells):
            # merge horizontal runs of occupied cells
            padded = np.concatenate([[False], row, [False]])
            edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
            for i0, i1 in zip(edges[::2], edges[1::2]):
                x0 = grid.origin[0] + i0 * res
                y1 = grid.origin[1] + (j + 1) * res
                px, py = page.apply([x0, y1])
                out.append(
                    f'<rect x="{px:.2f}" y="{py:.2f}" width="{(i1 - i0) * res * scale:.2f}" height="{res * scale:.2f}"/>'
                )
        out.append("</g>")
    if corridor:
        out.append('<g id="corridor" fill="#3a7bd5" fill-opacity="0.12" stroke="#3a7bd5" stroke-opacity="0.5">')
        for seg in corridor:
            out.append(f'<polygon points="{_points_attr(page.apply(seg.polygon.vertices()))}"/>')
        out.append("</g>")
    if path is not None and path.pieces:
        pts = page.apply(path.dense_states(10)[1][:, :2])
        out.append(f'<polyline id="path" points="{_points_attr(pts)}" fill="none" stroke="#e08a00" stroke-dasharray="4 3"/>')
    if traj is not None:
        ts = traj.sample_times(min(0.02, max(traj.duration, 1e-3)))
        pts = page.apply(traj.eval(ts, 0)[:, :2])
        out.append(f'<polyline id="trajectory" points="{_points_attr(pts)}" fill="none" stroke="#c0392b" stroke-width="2"/>')
        if shape is not None:
            out.append('<g id="footprints" fill="none" stroke="#27ae60" stroke-width="1">')
            poses = traj.eval(np.minimum(footprint_times(traj.duration, footprint_interval), traj.duration), 0)
            quads = transform_points(shape.body_vertices(), poses[:, 0], poses[:, 1], poses[:, 2])
            for q in quads:
                out.append(f'<polygon class="footprint" points="{_points_attr(page.apply(q))}"/>')
            out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
