"""Procedural reconstructions of the bundled benchmark maps.

Both maps only reproduce the stated overall size and narrowest passage; the
original environments were never published.
"""

from __future__ import annotations

import numpy as np

from .gridmap import DEFAULT_RESOLUTION, OccupancyGrid


def _fill(cells: np.ndarray, res: float, x0: float, y0: float, x1: float, y1: float) -> None:
    # Occupy every cell whose center lies in [x0, x1] x [y0, y1].
    i0, i1 = int(round(x0 / res)), int(round(x1 / res))
    j0, j1 = int(round(y0 / res)), int(round(y1 / res))
    cells[j0:j1, i0:i1] = True


def _clear(cells: np.ndarray, res: float, x0: float, y0: float, x1: float, y1: float) -> None:
    i0, i1 = int(round(x0 / res)), int(round(x1 / res))
    j0, j1 = int(round(y0 / res)), int(round(y1 / res))
    cells[j0:j1, i0:i1] = False


def narrow_s_map(resolution: float = DEFAULT_RESOLUTION) -> OccupancyGrid:
    """8 m wide, 16 m tall S-shaped course; the slimmest opening is 0.8 m.

    Three 0.3 m thick cross walls leave openings alternating right, left,
    right (1.2 m, 0.8 m, 1.0 m wide). Two pillars sit between them.
    """
    res = resolution
    cells = np.zeros((int(round(16 / res)), int(round(8 / res))), dtype=bool)
    for y, (g0, g1) in ((4.0, (5.4, 6.6)), (8.0, (1.2, 2.0)), (12.0, (5.0, 6.0))):
        _fill(cells, res, 0.0, y, 8.0, y + 0.3)
        _clear(cells, res, g0, y, g1, y + 0.3)
    _fill(cells, res, 2.0, 5.6, 3.0, 6.4)
    _fill(cells, res, 4.6, 9.8, 5.6, 10.6)
    return OccupancyGrid(cells, res)


def narrow_gap_map(resolution: float = DEFAULT_RESOLUTION) -> OccupancyGrid:
    """15 m by 8 m course crossed by three walls; the narrowest opening is 0.6 m.

    Openings, left to right: 0.6 m near the bottom, 0.8 m near the top,
    1.0 m in the middle.
    """
    res = resolution
    cells = np.zeros((int(round(8 / res)), int(round(15 / res))), dtype=bool)
    for x, (g0, g1) in ((4.0, (2.0, 2.6)), (8.0, (5.6, 6.4)), (11.5, (3.5, 4.5))):
        _fill(cells, res, x, 0.0, x + 0.3, 8.0)
        _clear(cells, res, x, g0, x + 0.3, g1)
    return OccupancyGrid(cells, res)


def open_map(width: float = 10.0, height: float = 6.0, resolution: float = DEFAULT_RESOLUTION) -> OccupancyGrid:
    return OccupancyGrid(np.zeros((int(round(height / resolution)), int(round(width / resolution))), dtype=bool), resolution)


BUILDERS = {
    "narrow_s": narrow_s_map,
    "narrow_gap": narrow_gap_map,
    "open": open_map,
}
