"""Safe flight corridors grown from the robot footprint at sampled path poses.

Each corridor cell is a rotated rectangle: the robot's oriented bounding box
with its four faces pushed outward, one grid step at a time, until the swept
strip would cover an occupied cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geometry import ConvexPolygon, Pose2, RobotShape, transform_points
from .gridmap import OccupancyGrid, polygons_hit
from .search import PathResult, poses_collide

DEFAULT_MAX_EXPAND = 2.0
_FACE_MARGIN = 1e-7


class InvalidAnchorError(ValueError):
    """Anchor footprint already collides with the map."""


@dataclass(frozen=True, eq=False)
class CorridorSegment:
    anchor: Pose2
    polygon: ConvexPolygon
    expansion: tuple[float, float, float, float]  # +x, +y, -x, -y faces, body frame


def _pick_indices(states: NDArray, spacing: float, yaw_scale: float) -> NDArray[np.int64]:
    seg = np.hypot(np.diff(states[:, 0]), np.diff(states[:, 1])) + yaw_scale * np.abs(np.diff(states[:, 2]))
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    if total <= 1e-12:
        return np.array([0], dtype=np.int64)
    # evenly spaced targets: no gap exceeds ``spacing`` and no sliver is left at the end
    n = int(math.ceil(total / spacing - 1e-9))
    picks = [0]
    for k in range(1, n + 1):
        idx = int(np.argmin(np.abs(arc - k * total / n)))
        if idx > picks[-1]:
            picks.append(idx)
    return np.array(picks, dtype=np.int64)


def constraint_samples(
    path: PathResult, spacing: float, n_per_piece: int = 10, yaw_scale: float = 0.0
) -> tuple[NDArray, NDArray]:
    """Times and ``[x, y, psi, vx, vy]`` states roughly ``spacing`` apart.

    Distance along the path is planar arc length plus ``yaw_scale`` times
    the accumulated yaw change, so with ``yaw_scale`` set to the robot's half
    diagonal it bounds how far a corner travels and rotations in place still
    receive samples. Samples are drawn from the path checkpoints, so
    consecutive picks may exceed ``spacing`` by up to one checkpoint step.
    First and last checkpoints are always included.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    times, states = path.dense_states(n_per_piece)
    picks = _pick_indices(states, spacing, yaw_scale)
    return times[picks], states[picks]


def sample_constraint_points(
    path: PathResult, spacing: float, n_per_piece: int = 10, yaw_scale: float = 0.0
) -> list[Pose2]:
    _, states = constraint_samples(path, spacing, n_per_piece, yaw_scale)
    return [Pose2(float(s[0]), float(s[1]), float(s[2])) for s in states]


def _face_strip(shape_ext: NDArray, face: int, step: float) -> NDArray[np.float64]:
    # Body-frame quad between face ``face`` at its current offset and ``+step``.
    ex_p, ey_p, ex_m, ey_m = shape_ext
    if face == 0:
        return np.array([[ex_p, -ey_m], [ex_p + step, -ey_m], [ex_p + step, ey_p], [ex_p, ey_p]])
    if face == 1:
        return np.array([[ex_p, ey_p], [ex_p, ey_p + step], [-ex_m, ey_p + step], [-ex_m, ey_p]])
    if face == 2:
        return np.array([[-ex_m, ey_p], [-ex_m - step, ey_p], [-ex_m - step, -ey_m], [-ex_m, -ey_m]])
    return np.array([[-ex_m, -ey_m], [-ex_m, -ey_m - step], [ex_p, -ey_m - step], [ex_p, -ey_m]])


def expand_obb(
    grid: OccupancyGrid,
    shape: RobotShape,
    anchor: Pose2,
    step: float | None = None,
    max_expand: float = DEFAULT_MAX_EXPAND,
    refine: int = 4,
) -> CorridorSegment:
    """Grow the anchor's bounding box face by face (round-robin) inside free space.

    Faces advance in ``step`` increments until their next strip would cover
    an occupied cell or ``max_expand`` is reached. A face that gets blocked
    immediately spends ``refine`` bisection steps on the partial increment,
    so faces next to a wall still open up by a fraction of a cell. Doing this
    at the moment of blocking (rather than after all faces stop) makes the
    result monotone in ``max_expand``.
    """
    step = grid.resolution if step is None else step
    if not step > 0 or max_expand < 0:
        raise ValueError("step must be positive and max_expand non-negative")
    if poses_collide(grid, shape, np.array([[anchor.x, anchor.y, anchor.psi]]))[0]:
        raise InvalidAnchorError(f"anchor ({anchor.x:.3f}, {anchor.y:.3f}, {anchor.psi:.3f}) is in collision")
    base = np.array([shape.length, shape.width, shape.length, shape.width]) * 0.5
    ext = base.copy()
    max_steps = int(math.floor(max_expand / step + 1e-9))
    steps = np.zeros(4, dtype=np.int64)
    active = [max_steps > 0] * 4

    def strip_free(face, depth):
        world = transform_points(_face_strip(ext, face, depth), anchor.x, anchor.y, anchor.psi)
        return not polygons_hit(grid, world[None])[0]

    while any(active):
        for face in range(4):
            if not active[face]:
                continue
            if strip_free(face, step):
                steps[face] += 1
                ext[face] += step
                active[face] = steps[face] < max_steps
                continue
            active[face] = False
            lo, hi = 0.0, min(step, max_expand - (ext[face] - base[face]))
            for _ in range(refine):
                mid = 0.5 * (lo + hi)
                if strip_free(face, mid):
                    lo = mid
                else:
                    hi = mid
            ext[face] += lo
    expansion = np.minimum(ext - base, max_expand)
    # Faces lying exactly on a cell boundary count as touching it; pull them
    # in slightly so rounding in the final polygon cannot flip the test.
    margin = _FACE_MARGIN
    while True:
        # never cut into the anchor body itself, which is known to be free
        pulled = expansion - np.minimum(margin, expansion)
        poly = ConvexPolygon.oriented_box((anchor.x, anchor.y), anchor.psi, base + pulled)
        if polygon_is_free(grid, poly) or margin >= 0.5 * grid.resolution:
            break
        margin *= 10.0
    return CorridorSegment(anchor, poly, tuple(float(e) for e in pulled))


def corridor_from_anchors(
    grid: OccupancyGrid,
    shape: RobotShape,
    anchors: list[Pose2],
    step: float | None = None,
    max_expand: float = DEFAULT_MAX_EXPAND,
    refine: int = 4,
) -> list[CorridorSegment]:
    return [expand_obb(grid, shape, a, step, max_expand, refine) for a in anchors]


def build_corridor(
    grid: OccupancyGrid,
    shape: RobotShape,
    path: PathResult,
    spacing: float,
    step: float | None = None,
    max_expand: float = DEFAULT_MAX_EXPAND,
) -> list[CorridorSegment]:
    return corridor_along_path(grid, shape, path, spacing, step, max_expand)[2]


def _box_inside(shape: RobotShape, pose: NDArray, poly: ConvexPolygon, tol: float = 1e-6) -> bool:
    corners = transform_points(shape.body_vertices(), pose[0], pose[1], pose[2])
    return bool(np.all(corners @ poly.A.T - poly.b <= tol))


def corridor_along_path(
    grid: OccupancyGrid,
    shape: RobotShape,
    path: PathResult,
    spacing: float,
    step: float | None = None,
    max_expand: float = DEFAULT_MAX_EXPAND,
    end_pose: Pose2 | None = None,
    n_per_piece: int = 10,
    max_segments: int = 1000,
) -> tuple[NDArray, NDArray, list[CorridorSegment]]:
    """Corridor whose consecutive polygons jointly cover the searched path.

    Anchors are first picked about ``spacing`` apart (corner travel, see
    :func:`constraint_samples`). Then every path checkpoint between two
    anchors must have its whole box inside one of the two polygons;
    otherwise an anchor is inserted at the first uncovered checkpoint and
    the check repeats on both halves.

    ``end_pose`` replaces the final pose (e.g. the exact goal yaw).

    Returns anchor times, anchor states ``[x, y, psi, vx, vy]`` and segments.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    times, states = path.dense_states(n_per_piece)
    states = states.copy()
    if end_pose is not None:
        states[-1, :3] = [end_pose.x, end_pose.y, end_pose.psi]
    picks = list(_pick_indices(states, spacing, shape.half_diagonal))

    def segment_at(k):
        return expand_obb(grid, shape, Pose2(*(float(v) for v in states[k, :3])), step, max_expand)

    segs = {k: segment_at(k) for k in picks}
    done: list[int] = [picks[0]]
    pending = list(reversed(picks[1:]))
    while pending:
        a, b = done[-1], pending[-1]
        pa, pb = segs[a].polygon, segs[b].polygon
        gap = next(
            (k for k in range(a + 1, b) if not (_box_inside(shape, states[k], pa) or _box_inside(shape, states[k], pb))),
            None,
        )
        if gap is None or len(segs) >= max_segments:
            done.append(pending.pop())
            continue
        segs[gap] = segment_at(gap)
        pending.append(gap)
    idx = np.array(done, dtype=np.int64)
    return times[idx], states[idx], [segs[k] for k in done]


def polygon_is_free(grid: OccupancyGrid, poly: ConvexPolygon) -> bool:
    """Rasterize the polygon at grid resolution and report whether every covered cell is free."""
    return not polygons_hit(grid, poly.vertices()[None], use_clearance=False)[0]


def format_corridor(segments: list[CorridorSegment]) -> str:
    """One polygon per line: ``x,y`` vertex pairs in world meters."""
    lines = []
    for seg in segments:
        lines.append(" ".join(f"{x:.6f},{y:.6f}" for x, y in seg.polygon.vertices()))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_corridor(text: str) -> list[NDArray[np.float64]]:
    polys = []
    for line in text.splitlines():
        if line.strip():
            polys.append(np.array([[float(v) for v in pair.split(",")] for pair in line.split()]))
    return polys
