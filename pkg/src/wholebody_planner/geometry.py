"""Oriented bounding boxes of the rectangular robot and H-polygon primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

CONTAIN_TOL = 1e-9


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    psi: float  # unwrapped

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y, self.psi])


@dataclass(frozen=True)
class RobotShape:
    """Rectangular footprint; ``length`` lies along the body x axis."""

    length: float
    width: float
    edge_samples_per_side: int = 5

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"robot dimensions must be positive, got {self.length} x {self.width}")
        if self.edge_samples_per_side < 2:
            raise ValueError("edge_samples_per_side must be >= 2")

    @property
    def half_diagonal(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)

    def body_vertices(self) -> NDArray[np.float64]:
        """Corners in the body frame, CCW from ``(+l/2, +w/2)``."""
        hl, hw = 0.5 * self.length, 0.5 * self.width
        return np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])

    def body_edge_samples(self) -> NDArray[np.float64]:
        """Evenly spaced body-frame points on the four edges, each corner once."""
        v = self.body_vertices()
        n = self.edge_samples_per_side
        s = np.linspace(0.0, 1.0, n)[:-1]
        pts = [v[k] + s[:, None] * (v[(k + 1) % 4] - v[k]) for k in range(4)]
        return np.concatenate(pts, axis=0)


def rotation(psi: ArrayLike) -> NDArray[np.float64]:
    """Rotation matrices; shape ``(..., 2, 2)``."""
    psi = np.asarray(psi, dtype=float)
    c, s = np.cos(psi), np.sin(psi)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def transform_points(body_pts: ArrayLike, x: ArrayLike, y: ArrayLike, psi: ArrayLike) -> NDArray[np.float64]:
    """Map body-frame points to the world for a batch of poses.

    Returns shape ``(*pose_shape, n_points, 2)``.
    """
    body_pts = np.asarray(body_pts, dtype=float)
    x, y, psi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, psi)))
    c, s = np.cos(psi)[..., None], np.sin(psi)[..., None]
    bx, by = body_pts[:, 0], body_pts[:, 1]
    wx = c * bx - s * by + x[..., None]
    wy = s * bx + c * by + y[..., None]
    return np.stack([wx, wy], axis=-1)


def obb_vertices(shape: RobotShape, pose: Pose2) -> NDArray[np.float64]:
    """World-frame OBB corners, shape ``(4, 2)``."""
    return transform_points(shape.body_vertices(), pose.x, pose.y, pose.psi)


def edge_sample_points(shape: RobotShape, pose: Pose2) -> NDArray[np.float64]:
    return transform_points(shape.body_edge_samples(), pose.x, pose.y, pose.psi)


def wrap_angle(a: ArrayLike) -> NDArray[np.float64] | float:
    """Wrap to ``(-pi, pi]``."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)
    return float(w) if np.ndim(w) == 0 else w


def unwrap_near(angle: float, reference: float) -> float:
    """Representative of ``angle`` closest to ``reference``."""
    return reference + float(wrap_angle(angle - reference))


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Convex polygon ``{q : A q <= b}`` with unit outward normals."""

    A: NDArray[np.float64]
    b: NDArray[np.float64]

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape[1] != 2 or A.shape[0] != b.shape[0]:
            raise ValueError(f"inconsistent H-representation shapes {A.shape}, {b.shape}")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero normal in H-representation")
        object.__setattr__(self, "A", A / norms[:, None])
        object.__setattr__(self, "b", b / norms)

    @classmethod
    def oriented_box(cls, center: ArrayLike, psi: float, extents: ArrayLike) -> ConvexPolygon:
        """Rectangle aligned with yaw ``psi``.

        ``extents`` holds the face distances from ``center`` along body
        ``+x, +y, -x, -y``.
        """
        c, s = math.cos(psi), math.sin(psi)
        ex, ey = np.array([c, s]), np.array([-s, c])
        A = np.stack([ex, ey, -ex, -ey])
        b = A @ np.asarray(center, dtype=float) + np.asarray(extents, dtype=float)
        return cls(A, b)

    def vertices(self) -> NDArray[np.float64]:
        """Corners in CCW order, from pairwise intersections of consecutive faces.

        Faces must already be listed in angular order (true for
        :meth:`oriented_box`).
        """
        n = len(self.b)
        out = []
        for k in range(n):
            m = np.stack([self.A[k], self.A[(k + 1) % n]])
            out.append(np.linalg.solve(m, [self.b[k], self.b[(k + 1) % n]]))
        return np.array(out)


def violation_rows(poly: ConvexPolygon, q: ArrayLike) -> NDArray[np.float64]:
    """``A q - b``; positive entries are penetration depths in meters."""
    q = np.asarray(q, dtype=float)
    return q @ poly.A.T - poly.b


def polygon_contains(poly: ConvexPolygon, q: ArrayLike) -> bool | NDArray[np.bool_]:
    inside = np.all(violation_rows(poly, q) <= CONTAIN_TOL, axis=-1)
    return bool(inside) if np.ndim(inside) == 0 else inside
