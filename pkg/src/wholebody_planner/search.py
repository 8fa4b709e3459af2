"""Kinodynamic best-first search over (x, y, yaw, vx, vy) with whole-body checks.

Nodes are expanded with constant-input motion primitives of a planar double
integrator plus a yaw integrator. Each primitive is checked at ``n_checks``
instants by rasterizing the robot footprint against the grid. The cost of a
primitive is its control effort and duration plus a penalty on the mismatch
between heading and direction of travel.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from . import _kernels
from .geometry import RobotShape, transform_points, unwrap_near
from .gridmap import OccupancyGrid, polygons_hit

log = logging.getLogger(__name__)

ALIGN_MIN_SPEED = 0.05


class SearchError(RuntimeError):
    """Base class for search failures."""


class NoPathError(SearchError):
    """Open set exhausted (or goal unreachable by construction)."""


class SearchBudgetError(SearchError):
    """Expansion budget exceeded before reaching the goal."""


@dataclass(frozen=True)
class SearchState:
    x: float
    y: float
    psi: float
    vx: float = 0.0
    vy: float = 0.0

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y, self.psi, self.vx, self.vy])

    @classmethod
    def from_array(cls, a: ArrayLike) -> SearchState:
        a = np.asarray(a, dtype=float)
        return cls(*(float(v) for v in a[:5]))

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class ControlInput:
    ax: float
    ay: float
    wz: float

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.ax, self.ay, self.wz])


@dataclass
class SearchLimits:
    v_max: float = 2.0
    a_max: float = 2.0
    w_zmax: float = 1.5
    tau: float = 0.5
    r: int = 1
    p: int = 1
    rho: float = 1.0
    lambda_t: float = 1.0
    # search tuning
    n_checks: int = 10
    prune_xy: float = 0.2
    prune_yaw: float = math.radians(10.0)
    goal_speed_tol: float = 0.2
    max_expansions: int = 300_000
    analytic_radius: float = 5.0
    heuristic_weight: float = 5.0
    obstacle_heuristic: bool = True

    def __post_init__(self):
        for name in ("v_max", "a_max", "w_zmax", "tau", "rho", "prune_xy", "prune_yaw"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.r < 1 or self.p < 1 or self.n_checks < 1:
            raise ValueError("r, p and n_checks must be >= 1")
        if self.heuristic_weight < 1.0:
            raise ValueError("heuristic_weight must be >= 1")
        if self.lambda_t < 0:
            raise ValueError("lambda_t must be non-negative")


def propagate_array(states: ArrayLike, inputs: ArrayLike, dt: ArrayLike) -> NDArray[np.float64]:
    """Vectorized constant-input flow; ``states[..., 5]``, ``inputs[..., 3]``, ``dt[...]`` broadcast."""
    s = np.asarray(states, dtype=float)
    u = np.asarray(inputs, dtype=float)
    dt = np.asarray(dt, dtype=float)
    half = 0.5 * dt * dt
    cols = (
        s[..., 0] + s[..., 3] * dt + u[..., 0] * half,
        s[..., 1] + s[..., 4] * dt + u[..., 1] * half,
        s[..., 2] + u[..., 2] * dt,
        s[..., 3] + u[..., 0] * dt,
        s[..., 4] + u[..., 1] * dt,
    )
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def propagate(state: SearchState, u: ControlInput, dt: float) -> SearchState:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return SearchState.from_array(propagate_array(state.as_array(), u.as_array(), dt))


@dataclass(frozen=True)
class MotionPrimitive:
    start: SearchState
    input: ControlInput
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("primitive duration must be positive")

    @property
    def end(self) -> SearchState:
        return propagate(self.start, self.input, self.duration)

    def states(self, ts: ArrayLike) -> NDArray[np.float64]:
        """States at local times ``ts``; shape ``(len(ts), 5)``."""
        ts = np.asarray(ts, dtype=float)
        return propagate_array(self.start.as_array(), self.input.as_array()[None, :], ts)

    def accelerations(self, ts: ArrayLike) -> NDArray[np.float64]:
        ts = np.asarray(ts, dtype=float)
        return np.broadcast_to([self.input.ax, self.input.ay], ts.shape + (2,)).copy()


@dataclass(frozen=True, eq=False)
class AnalyticSegment:
    """Closed-form cubic connection (per axis) with linearly interpolated yaw."""

    start: SearchState
    goal: SearchState
    duration: float
    coeffs: NDArray[np.float64]  # (2, 4) cubic coefficients, ascending powers
    psi0: float
    psi1: float

    def states(self, ts: ArrayLike) -> NDArray[np.float64]:
        t = np.asarray(ts, dtype=float)
        c = self.coeffs
        pw = np.stack([np.ones_like(t), t, t * t, t**3], axis=-1)
        dpw = np.stack([np.zeros_like(t), np.ones_like(t), 2 * t, 3 * t * t], axis=-1)
        pos = pw @ c.T
        vel = dpw @ c.T
        psi = self.psi0 + (self.psi1 - self.psi0) * t / self.duration
        return np.column_stack([pos[:, 0], pos[:, 1], psi, vel[:, 0], vel[:, 1]])

    def accelerations(self, ts: ArrayLike) -> NDArray[np.float64]:
        t = np.asarray(ts, dtype=float)
        c = self.coeffs
        return np.stack([2 * c[:, 2] + 6 * c[:, 3] * ti for ti in np.atleast_1d(t)])

    @property
    def yaw_rate(self) -> float:
        return (self.psi1 - self.psi0) / self.duration


@dataclass(eq=False)
class SearchNode:
    """Search graph node; the state is kept as a raw ``[x, y, psi, vx, vy]`` array."""

    s: NDArray[np.float64]
    g_c: float
    f_c: float
    parent: SearchNode | None = None
    u: NDArray[np.float64] | None = None  # arriving input
    dur: float = 0.0
    closed: bool = False

    @property
    def state(self) -> SearchState:
        return SearchState.from_array(self.s)

    @property
    def primitive(self) -> MotionPrimitive | None:
        if self.parent is None:
            return None
        return MotionPrimitive(self.parent.state, ControlInput(*(float(v) for v in self.u)), self.dur)


@dataclass(eq=False)
class PathResult:
    """Ordered primitives from start to the final node, plus an optional closing shot."""

    start: SearchState
    primitives: list[MotionPrimitive] = field(default_factory=list)
    analytic: AnalyticSegment | None = None
    cost: float = 0.0
    expansions: int = 0

    @property
    def pieces(self) -> list:
        return [*self.primitives, *([self.analytic] if self.analytic is not None else [])]

    @property
    def node_states(self) -> list[SearchState]:
        states = [self.start] + [p.end for p in self.primitives]
        if self.analytic is not None:
            states.append(self.analytic.goal)
        return states

    @property
    def duration(self) -> float:
        return sum(p.duration for p in self.pieces)

    def dense_states(self, n_per_piece: int = 10) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Times and states at ``n_per_piece`` checkpoints per piece (start included).

        The closing shot is sampled at the same temporal density as the
        primitives.
        """
        times = [0.0]
        states = [self.start.as_array()[None, :]]
        t0 = 0.0
        dt_nominal = None
        for piece in self.pieces:
            if isinstance(piece, MotionPrimitive):
                n = n_per_piece
                dt_nominal = piece.duration / n_per_piece if dt_nominal is None else dt_nominal
            else:
                step = dt_nominal or piece.duration / n_per_piece
                n = max(n_per_piece, int(math.ceil(piece.duration / step)))
            ts = piece.duration * np.arange(1, n + 1) / n
            states.append(piece.states(ts))
            times.extend((t0 + ts).tolist())
            t0 += piece.duration
        return np.array(times), np.concatenate(states, axis=0)


def poses_collide(grid: OccupancyGrid, shape: RobotShape, poses: ArrayLike) -> NDArray[np.bool_]:
    """Whole-body test for poses ``(..., >=3)`` given as ``x, y, psi`` columns."""
    poses = np.asarray(poses, dtype=float)
    lead = poses.shape[:-1]
    flat = poses.reshape(-1, poses.shape[-1])
    quads = transform_points(shape.body_vertices(), flat[:, 0], flat[:, 1], flat[:, 2])
    return polygons_hit(grid, quads).reshape(lead)


def primitive_collision_free(
    grid: OccupancyGrid, shape: RobotShape, prim: MotionPrimitive | AnalyticSegment, n_checks: int = 10
) -> bool:
    """Whole-body test of the poses at ``k * duration / n_checks`` for ``k = 1..n_checks``."""
    if n_checks < 1:
        raise ValueError("n_checks must be >= 1")
    ts = prim.duration * np.arange(1, n_checks + 1) / n_checks
    return not bool(np.any(poses_collide(grid, shape, prim.states(ts))))


def enumerate_inputs(limits: SearchLimits) -> list[tuple[ControlInput, float]]:
    """Uniform ``(2r+1)^3`` input grid times ``p`` durations."""
    r = limits.r
    levels = np.arange(-r, r + 1) / r
    durations = limits.tau * np.arange(1, limits.p + 1) / limits.p
    out = []
    for dur in durations:
        for ax, ay, wz in itertools.product(levels, levels, levels):
            out.append((ControlInput(ax * limits.a_max, ay * limits.a_max, wz * limits.w_zmax), float(dur)))
    return out


def _input_table(limits: SearchLimits) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    pairs = enumerate_inputs(limits)
    u = np.array([p[0].as_array() for p in pairs])
    d = np.array([p[1] for p in pairs])
    return u, d


def _edge_cost_array(u: NDArray, dur: NDArray, end: NDArray, limits: SearchLimits) -> NDArray[np.float64]:
    u = np.ascontiguousarray(np.atleast_2d(u), dtype=float)
    end = np.ascontiguousarray(np.atleast_2d(end), dtype=float)
    dur = np.ascontiguousarray(np.broadcast_to(np.asarray(dur, dtype=float), (len(u),)))
    return _kernels.edge_costs(u, dur, end, float(limits.rho), float(limits.lambda_t), ALIGN_MIN_SPEED)


def edge_cost(prim: MotionPrimitive, limits: SearchLimits) -> float:
    end = prim.end.as_array()
    return float(_edge_cost_array(prim.input.as_array(), prim.duration, end, limits)[0])


def optimal_connection_time(states: ArrayLike, goal: SearchState, rho: float) -> tuple[NDArray, NDArray]:
    """Minimum of effort + ``rho`` T over T for each state, and the minimizing T.

    Per axis, the double-integrator optimum between (p0, v0) and (p1, v1)
    over a fixed horizon T costs ``12|dp|^2/T^3 - 12 (v0+v1).dp/T^2 +
    4(|v0|^2 + v0.v1 + |v1|^2)/T``. Every stationary point in T is bracketed
    between the real roots of the derivative and refined by bisection.
    """
    s = np.atleast_2d(np.asarray(states, dtype=float))
    g = goal.as_array()
    dp = np.ascontiguousarray(g[None, :2] - s[:, :2])
    v0 = np.ascontiguousarray(s[:, 3:5])
    v1 = np.ascontiguousarray(np.broadcast_to(g[3:5], v0.shape))
    return _kernels.connection_costs(dp, v0, v1, float(rho))


def heuristic(state: SearchState, goal: SearchState, rho: float) -> float:
    return float(optimal_connection_time(state.as_array(), goal, rho)[0][0])


def analytic_expand(
    state: SearchState,
    goal: SearchState,
    grid: OccupancyGrid,
    shape: RobotShape,
    limits: SearchLimits,
) -> AnalyticSegment | None:
    """Closed-form shot to the goal, or ``None`` if infeasible or in collision."""
    if math.hypot(goal.x - state.x, goal.y - state.y) > limits.analytic_radius:
        return None
    _, T = optimal_connection_time(state.as_array(), goal, limits.rho)
    T = float(T[0])
    if not T > 1e-6:
        return None
    dp = np.array([goal.x - state.x, goal.y - state.y])
    v0 = np.array([state.vx, state.vy])
    v1 = np.array([goal.vx, goal.vy])
    a2 = (3.0 * dp - (2.0 * v0 + v1) * T) / T**2
    a3 = (-2.0 * dp + (v0 + v1) * T) / T**3
    coeffs = np.column_stack([[state.x, state.y], v0, a2, a3])
    psi1 = unwrap_near(goal.psi, state.psi)
    seg = AnalyticSegment(state, goal, T, coeffs, state.psi, psi1)
    eps = 1e-9
    if abs(seg.yaw_rate) > limits.w_zmax + eps:
        return None
    # acceleration is linear in t: endpoints bound it
    acc = np.abs(np.stack([2 * a2, 2 * a2 + 6 * a3 * T]))
    if np.any(acc > limits.a_max + eps):
        return None
    step = limits.tau / limits.n_checks
    n = max(limits.n_checks, int(math.ceil(T / step)))
    ts = T * np.arange(0, n + 1) / n
    st = seg.states(ts)
    # velocity is quadratic: add its interior extremum per axis
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ext = np.where(np.abs(a3) > 0, -a2 / (3 * a3), -1.0)
    vel = np.abs(st[:, 3:5])
    for ax in range(2):
        if 0 < t_ext[ax] < T:
            vel = np.vstack([vel, np.abs(seg.states([t_ext[ax]])[:, 3:5])])
    if np.any(vel > limits.v_max + eps):
        return None
    if poses_collide(grid, shape, st[1:, :3]).any():
        return None
    return seg


def geodesic_distance(grid: OccupancyGrid, shape: RobotShape, goal_xy: ArrayLike) -> NDArray[np.float64]:
    """Shortest 8-connected distance (m) from every cell to the goal cell.

    Only cells that could host the robot center at some yaw are traversable:
    a disc of radius half the short side around the center lies inside the box for
    every yaw, so the center's cell needs that much clearance (less half a
    cell diagonal). Cells that cannot reach the goal get ``inf``.
    """
    res = grid.resolution
    h, w = grid.height_cells, grid.width_cells
    ok = grid.clearance >= 0.5 * min(shape.width, shape.length) - res / math.sqrt(2.0) - 1e-9
    gi, gj = (int(v) for v in grid.world_to_cell(np.asarray(goal_xy, dtype=float)))
    dist = np.full((h, w), np.inf)
    if not (0 <= gi < w and 0 <= gj < h and ok[gj, gi]):
        return dist
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [], [], []
    for dj, di in ((0, 1), (1, 0), (1, 1), (1, -1)):
        a = ok[max(0, -dj) : h - max(0, dj), max(0, -di) : w - max(0, di)]
        b = ok[max(0, dj) :, max(0, di) : w + min(0, di) or None][: a.shape[0], : a.shape[1]]
        ia = idx[max(0, -dj) : h - max(0, dj), max(0, -di) : w - max(0, di)]
        ib = idx[max(0, dj) :, max(0, di) : w + min(0, di) or None][: a.shape[0], : a.shape[1]]
        m = a & b
        rows.append(ia[m])
        cols.append(ib[m])
        vals.append(np.full(int(m.sum()), res * math.hypot(di, dj)))
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    graph = coo_matrix((vals, (rows, cols)), shape=(h * w, h * w)).tocsr()
    d = dijkstra(graph, directed=False, indices=int(idx[gj, gi]))
    return d.reshape(h, w)


class KinodynamicSearch:
    """One search instance: owns its open/closed sets, shares the grid read-only."""

    def __init__(self, grid: OccupancyGrid, shape: RobotShape, limits: SearchLimits):
        self.grid = grid
        self.shape = shape
        self.limits = limits
        self._u, self._dur = _input_table(limits)
        n = limits.n_checks
        self._frac = np.arange(1, n + 1) / n
        self._body = np.ascontiguousarray(shape.body_vertices())
        self._origin = np.asarray(grid.origin, dtype=float)
        self._dist: NDArray[np.float64] | None = None
        self.pop_log: list[float] = []

    def keys(self, states: NDArray) -> list[tuple[int, int, int]]:
        """Pruning cells ``(x bin, y bin, yaw bin)`` for ``(n, 5)`` states."""
        lim = self.limits
        st = np.atleast_2d(states)
        kx = np.floor(st[:, 0] / lim.prune_xy).astype(np.int64)
        ky = np.floor(st[:, 1] / lim.prune_xy).astype(np.int64)
        kp = np.floor(np.mod(st[:, 2] + np.pi, 2 * np.pi) / lim.prune_yaw).astype(np.int64)
        return list(zip(kx.tolist(), ky.tolist(), kp.tolist()))

    def reach_goal(self, s: NDArray, goal: SearchState) -> bool:
        lim = self.limits
        same_cell = math.floor(s[0] / lim.prune_xy) == math.floor(goal.x / lim.prune_xy) and math.floor(
            s[1] / lim.prune_xy
        ) == math.floor(goal.y / lim.prune_xy)
        return same_cell and math.hypot(s[3], s[4]) < lim.goal_speed_tol

    def heuristics(self, states: NDArray, goal: SearchState) -> NDArray[np.float64]:
        """Weighted cost-to-go estimates for ``(n, 5)`` states.

        With ``obstacle_heuristic`` the straight-line offset to the goal is
        stretched to the geodesic distance around obstacles before the
        closed-form connection cost is taken; unreachable states get ``inf``.
        """
        lim = self.limits
        st = np.ascontiguousarray(np.atleast_2d(np.asarray(states, dtype=float)))
        use_dist = lim.obstacle_heuristic and self._dist is not None
        dist = self._dist if use_dist else np.zeros((1, 1))
        h = _kernels.heuristic_values(st, goal.as_array(), float(lim.rho), dist, self._origin, self.grid.resolution, use_dist)
        return lim.heuristic_weight * h

    def expand(self, s: NDArray) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
        """Indices into the input table of feasible, collision-free children and their end states."""
        grid = self.grid
        ends, ok = _kernels.expand_node(
            np.ascontiguousarray(s, dtype=float),
            self._u,
            self._dur,
            self._frac,
            float(self.limits.v_max),
            grid._padded,
            grid._clearance_cells,
            self._origin,
            grid.resolution,
            self._body,
            True,
        )
        idx = np.nonzero(ok)[0]
        return idx, ends[idx]

    def run(self, start: SearchState, goal: SearchState) -> PathResult:
        lim = self.limits
        if poses_collide(self.grid, self.shape, start.as_array()[None, :3])[0]:
            raise SearchError("start pose is in collision")
        if poses_collide(self.grid, self.shape, goal.as_array()[None, :3])[0]:
            raise NoPathError("goal pose is in collision")
        if np.allclose(start.as_array(), goal.as_array(), rtol=0.0, atol=1e-12):
            return PathResult(start)

        if lim.obstacle_heuristic:
            self._dist = geodesic_distance(self.grid, self.shape, (goal.x, goal.y))
        s0 = start.as_array()
        h0 = float(self.heuristics(s0, goal)[0])
        if not np.isfinite(h0):
            raise NoPathError("no passage wide enough for the robot connects start and goal")
        root = SearchNode(s0, 0.0, h0)
        k0 = self.keys(s0)[0]
        nodes: dict[tuple, SearchNode] = {k0: root}
        seq = itertools.count()
        open_heap = [(root.f_c, next(seq), k0)]
        expansions = 0
        self.pop_log = []
        while open_heap:
            f, _, k = heapq.heappop(open_heap)
            node = nodes[k]
            if node.closed or f != node.f_c:
                continue
            node.closed = True
            self.pop_log.append(f)
            if node.parent is not None and self.reach_goal(node.s, goal):
                return self._retrieve(node, None, expansions)
            shot = analytic_expand(node.state, goal, self.grid, self.shape, lim)
            if shot is not None:
                return self._retrieve(node, shot, expansions)
            expansions += 1
            if expansions > lim.max_expansions:
                raise SearchBudgetError(f"expansion budget {lim.max_expansions} exceeded")

            idx, ends = self.expand(node.s)
            if len(idx) == 0:
                continue
            g_new = node.g_c + _edge_cost_array(self._u[idx], self._dur[idx], ends, lim)
            h = self.heuristics(ends, goal)
            for m, kk in enumerate(self.keys(ends)):
                if not np.isfinite(h[m]):
                    continue
                other = nodes.get(kk)
                if other is not None and (other.closed or g_new[m] >= other.g_c):
                    continue
                j = idx[m]
                g = float(g_new[m])
                child = SearchNode(ends[m], g, g + float(h[m]), node, self._u[j], float(self._dur[j]))
                nodes[kk] = child
                heapq.heappush(open_heap, (child.f_c, next(seq), kk))
        raise NoPathError(f"open set exhausted after {expansions} expansions")

    @staticmethod
    def _retrieve(node: SearchNode, shot: AnalyticSegment | None, expansions: int) -> PathResult:
        prims = []
        cur = node
        while cur.parent is not None:
            prims.append(cur.primitive)
            cur = cur.parent
        prims.reverse()
        return PathResult(cur.state, prims, shot, node.g_c, expansions)


def search(
    grid: OccupancyGrid,
    shape: RobotShape,
    limits: SearchLimits,
    start: SearchState,
    goal: SearchState,
) -> PathResult:
    return KinodynamicSearch(grid, shape, limits).run(start, goal)
