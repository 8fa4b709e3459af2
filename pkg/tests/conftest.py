"""Shared oracles and fixtures.

The collision oracles deliberately avoid the package's rasterization code:
they sample points densely (a tenth of a cell apart) and look up each
point's cell directly in the occupancy array.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from wholebody_planner.geometry import RobotShape
from wholebody_planner.gridmap import OccupancyGrid


def cell_of(grid: OccupancyGrid, pts: np.ndarray) -> np.ndarray:
    """Occupancy of the cells containing ``pts``; outside the map reads occupied."""
    pts = np.asarray(pts, dtype=float)
    ij = np.floor((pts - np.asarray(grid.origin)) / grid.resolution).astype(int)
    i, j = ij[..., 0], ij[..., 1]
    inside = (i >= 0) & (i < grid.width_cells) & (j >= 0) & (j < grid.height_cells)
    out = np.ones(i.shape, dtype=bool)
    out[inside] = grid.cells[j[inside], i[inside]]
    return out


def oracle_segment_hits(grid: OccupancyGrid, p0, p1) -> bool:
    """Dense point sampling along the segment at resolution / 10."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(2, int(math.ceil(np.linalg.norm(p1 - p0) / (grid.resolution / 10))) + 1)
    s = np.linspace(0.0, 1.0, n)[:, None]
    return bool(cell_of(grid, p0 + s * (p1 - p0)).any())


def exact_segment_hits(grid: OccupancyGrid, p0, p1) -> bool:
    """Slab-clip the closed segment against every occupied closed cell square."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    x0, y0, x1, y1 = grid.extent
    lo_all, hi_all = np.minimum(p0, p1), np.maximum(p0, p1)
    if lo_all[0] < x0 or lo_all[1] < y0 or hi_all[0] > x1 or hi_all[1] > y1:
        return True
    ji = np.argwhere(grid.cells)
    lo = np.asarray(grid.origin) + ji[:, ::-1] * grid.resolution
    hi = lo + grid.resolution
    d = p1 - p0
    t0 = np.zeros(len(lo))
    t1 = np.ones(len(lo))
    for a in range(2):
        if abs(d[a]) < 1e-15:
            inside = (p0[a] >= lo[:, a]) & (p0[a] <= hi[:, a])
            t1 = np.where(inside, t1, -1.0)
            continue
        ta = (lo[:, a] - p0[a]) / d[a]
        tb = (hi[:, a] - p0[a]) / d[a]
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    return bool(np.any(t0 <= t1))


def oracle_box_hits(grid: OccupancyGrid, shape: RobotShape, pose) -> bool:
    """Rasterize the whole box (boundary and interior) at resolution / 10."""
    x, y, psi = (float(v) for v in pose[:3])
    step = grid.resolution / 10
    nu = int(math.ceil(shape.length / step)) + 1
    nv = int(math.ceil(shape.width / step)) + 1
    u = np.linspace(-shape.length / 2, shape.length / 2, nu)
    v = np.linspace(-shape.width / 2, shape.width / 2, nv)
    uu, vv = np.meshgrid(u, v)
    c, s = math.cos(psi), math.sin(psi)
    pts = np.stack([x + c * uu - s * vv, y + s * uu + c * vv], axis=-1)
    return bool(cell_of(grid, pts).any())


def oracle_polygon_free(grid: OccupancyGrid, vertices: np.ndarray) -> bool:
    """Every res/10 sample inside the convex polygon lies in a free cell."""
    v = np.asarray(vertices, float)
    lo, hi = v.min(axis=0), v.max(axis=0)
    step = grid.resolution / 10
    xs = np.arange(lo[0], hi[0] + step / 2, step)
    ys = np.arange(lo[1], hi[1] + step / 2, step)
    xx, yy = np.meshgrid(xs, ys)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    # strictly inside: stay a hair off the boundary, which may touch walls
    e = np.roll(v, -1, axis=0) - v
    cross = e[None, :, 0] * (pts[:, None, 1] - v[None, :, 1]) - e[None, :, 1] * (pts[:, None, 0] - v[None, :, 0])
    inside = np.all(cross > 1e-9, axis=1)
    return not bool(cell_of(grid, pts[inside]).any())


def random_grid(rng: np.random.Generator, n: int = 32, res: float = 0.1, density: float | None = None) -> OccupancyGrid:
    """Random map: scattered cells plus a few solid rectangles."""
    density = rng.uniform(0.02, 0.15) if density is None else density
    cells = rng.random((n, n)) < density
    for _ in range(rng.integers(0, 4)):
        i0, j0 = rng.integers(0, n, size=2)
        w, h = rng.integers(1, 6, size=2)
        cells[j0 : j0 + h, i0 : i0 + w] = True
    return OccupancyGrid(cells, res, (0.0, 0.0))


def fd_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function."""
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error of ``a`` against reference ``b``."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(b), np.linalg.norm(a), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
