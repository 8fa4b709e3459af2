"""Binary occupancy grids and exact cell-cover collision queries.

Cells are indexed ``(i, j)`` with ``i`` along world x and ``j`` along world y.
Cell ``(0, 0)`` has its lower-left corner at ``origin``. Anything outside the
map counts as occupied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage

from . import _kernels

DEFAULT_RESOLUTION = 0.1

_BITMAP_SUFFIXES = {".png", ".pgm", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff"}


class MapParseError(ValueError):
    """Malformed map document."""


class InvalidMapError(ValueError):
    """Map with zero extent or non-positive resolution."""


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Immutable 2-D occupancy grid.

    ``cells`` has shape ``(height_cells, width_cells)`` and is indexed
    ``cells[j, i]``; ``True`` means occupied.
    """

    cells: NDArray[np.bool_]
    resolution: float = DEFAULT_RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)
    _padded: NDArray[np.bool_] = field(init=False, repr=False)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise InvalidMapError(f"map must be a non-empty 2-D array, got shape {cells.shape}")
        if not self.resolution > 0:
            raise InvalidMapError(f"resolution must be positive, got {self.resolution}")
        cells = cells.copy()
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))
        padded = np.pad(cells, 1, constant_values=True)
        padded.setflags(write=False)
        object.__setattr__(self, "_padded", padded)

    @property
    def width_cells(self) -> int:
        return self.cells.shape[1]

    @property
    def height_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """World bounds ``(xmin, ymin, xmax, ymax)``."""
        x0, y0 = self.origin
        return (x0, y0, x0 + self.width_cells * self.resolution, y0 + self.height_cells * self.resolution)

    def world_to_cell(self, p: ArrayLike) -> NDArray[np.int64]:
        p = np.asarray(p, dtype=float)
        return np.floor((p - np.asarray(self.origin)) / self.resolution).astype(np.int64)

    def cell_to_world_center(self, ij: ArrayLike) -> NDArray[np.float64]:
        ij = np.asarray(ij, dtype=float)
        return np.asarray(self.origin) + (ij + 0.5) * self.resolution

    def occupied(self, i: ArrayLike, j: ArrayLike) -> NDArray[np.bool_]:
        """Vectorized occupancy lookup; out-of-bounds indices read as occupied."""
        i = np.clip(np.asarray(i, dtype=np.int64), -1, self.width_cells) + 1
        j = np.clip(np.asarray(j, dtype=np.int64), -1, self.height_cells) + 1
        return self._padded[j, i]

    @cached_property
    def clearance(self) -> NDArray[np.float64]:
        """Distance (m) from each cell center to the nearest occupied cell center.

        The map border counts as occupied. Indexed like ``cells``.
        """
        free = ~self._padded
        dist = ndimage.distance_transform_edt(free) * self.resolution
        return dist[1:-1, 1:-1]

    @cached_property
    def _clearance_cells(self) -> NDArray[np.float64]:
        return np.ascontiguousarray(self.clearance / self.resolution)

    def free_radius(self, p: ArrayLike) -> NDArray[np.float64]:
        """Lower bound on the obstacle-free radius around world points ``p``."""
        ij = self.world_to_cell(p)
        i, j = ij[..., 0], ij[..., 1]
        inside = (i >= 0) & (i < self.width_cells) & (j >= 0) & (j < self.height_cells)
        d = np.zeros(i.shape)
        d[inside] = self.clearance[j[inside], i[inside]]
        return d - self.resolution * math.sqrt(2.0)


def is_cell_occupied(grid: OccupancyGrid, ij: tuple[int, int]) -> bool:
    return bool(grid.occupied(ij[0], ij[1]))


def _to_grid(grid: OccupancyGrid, p: ArrayLike) -> NDArray[np.float64]:
    p = np.asarray(p, dtype=float)
    return np.ascontiguousarray((p - np.asarray(grid.origin)) / grid.resolution)


def segments_hit(grid: OccupancyGrid, p0: ArrayLike, p1: ArrayLike) -> NDArray[np.bool_]:
    """Batch form of :func:`segment_hits_obstacle` for ``(S, 2)`` endpoint arrays."""
    u0 = np.atleast_2d(_to_grid(grid, p0))
    u1 = np.atleast_2d(_to_grid(grid, p1))
    return _kernels.segments_hit(grid._padded, u0, u1)


def segment_hits_obstacle(grid: OccupancyGrid, p0: ArrayLike, p1: ArrayLike) -> bool:
    """True iff any cell the closed segment ``p0 -> p1`` passes through is occupied.

    Uses a supercover traversal: when the segment crosses a cell corner
    exactly, both side neighbours are tested as well.
    """
    return bool(segments_hit(grid, p0, p1)[0])


def polygons_hit(grid: OccupancyGrid, polys: ArrayLike, use_clearance: bool = True) -> NDArray[np.bool_]:
    """Exact footprint test for a batch of convex polygons.

    A polygon collides iff some cell it covers is occupied: boundary cells
    via supercover traversal of every edge, enclosed cells via a
    center-in-polygon test.

    Args:
        polys: ``(P, V, 2)`` world vertices, counter-clockwise.
        use_clearance: skip polygons whose circumcircle is provably free.
    """
    polys = np.asarray(polys, dtype=float)
    if polys.ndim == 2:
        polys = polys[None]
    u = _to_grid(grid, polys)
    return _kernels.polygons_hit(grid._padded, grid._clearance_cells, u, use_clearance)


def parse_ascii_map(text: str) -> OccupancyGrid:
    """Parse the ASCII map format.

    First line ``res <meters> origin <x> <y>``, then one row per line using
    ``#`` (occupied) and ``.`` (free). The first row is the top of the map
    (largest y).
    """
    lines = text.splitlines()
    if not lines or not text.strip():
        raise InvalidMapError("empty map document")
    header = lines[0].split()
    offset = len(lines[0]) + 1
    if len(header) != 5 or header[0] != "res" or header[2] != "origin":
        raise MapParseError(f"line 1 (byte 0): expected 'res <m> origin <x> <y>', got {lines[0]!r}")
    try:
        res = float(header[1])
        origin = (float(header[3]), float(header[4]))
    except ValueError as exc:
        raise MapParseError(f"line 1 (byte 0): {exc}") from None
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        row = line.rstrip("\r")
        if row.strip():
            bad = next((k for k, ch in enumerate(row) if ch not in "#."), None)
            if bad is not None:
                raise MapParseError(
                    f"line {lineno} (byte {offset + bad}): unexpected character {row[bad]!r}"
                )
            if rows and len(row) != len(rows[0]):
                raise MapParseError(
                    f"line {lineno} (byte {offset}): row length {len(row)} != {len(rows[0])}"
                )
            rows.append([ch == "#" for ch in row])
        offset += len(line) + 1
    if not rows:
        raise InvalidMapError("map document has no rows")
    cells = np.array(rows[::-1], dtype=bool)
    return OccupancyGrid(cells, res, origin)


def format_ascii_map(grid: OccupancyGrid) -> str:
    head = f"res {grid.resolution:g} origin {grid.origin[0]:g} {grid.origin[1]:g}"
    rows = ["".join("#" if c else "." for c in row) for row in grid.cells[::-1]]
    return "\n".join([head, *rows]) + "\n"


def load_bitmap(path: str | Path, resolution: float = DEFAULT_RESOLUTION, origin=(0.0, 0.0)) -> OccupancyGrid:
    """Grayscale image to grid; pixels darker than mid-gray are occupied."""
    from PIL import Image

    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"), dtype=np.uint8)
    if gray.size == 0:
        raise InvalidMapError(f"{path}: empty image")
    return OccupancyGrid(gray[::-1] < 128, resolution, origin)


def load_map(source: str | Path, resolution: float | None = None, origin=None) -> OccupancyGrid:
    """Load a map from an ASCII document or a grayscale bitmap file.

    ``source`` may be a path or the ASCII text itself. Bitmaps carry no
    header, so ``resolution`` and ``origin`` come from the arguments.
    """
    if isinstance(source, Path) or (isinstance(source, str) and source and "\n" not in source and Path(source).is_file()):
        path = Path(source)
        if path.suffix.lower() in _BITMAP_SUFFIXES:
            return load_bitmap(path, resolution or DEFAULT_RESOLUTION, origin or (0.0, 0.0))
        text = path.read_text()
    else:
        text = str(source)
    return parse_ascii_map(text)
