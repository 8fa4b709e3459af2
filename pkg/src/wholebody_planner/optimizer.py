"""Joint position/yaw trajectory optimization inside an OBB corridor.

The decision variables are the interior waypoints (x, y, yaw) of a MINCO
trajectory and unconstrained reals mapped to positive piece durations. The
objective is squared jerk plus a time cost plus penalties, evaluated at
fixed checkpoints along each piece, for:

* speed, acceleration and yaw-rate limits;
* every edge sample of the robot box leaving its assigned corridor polygon.

Gradients are analytic and flow back through the MINCO map.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _kernels
from .corridor import CorridorSegment
from .geometry import RobotShape
from .gridmap import OccupancyGrid
from .lbfgs import LineSearchError, minimize_lbfgs
from .minco import MincoTrajectory, basis_all, construct, grad_propagate, jerk_gram
from .search import poses_collide

log = logging.getLogger(__name__)

MIN_INITIAL_TIME = 0.1
# The solver sees duration parameters divided by this factor; it balances
# their curvature against the waypoints and cuts iterations severalfold.
TIME_VARIABLE_SCALE = 10.0


class OptimizationFailedError(RuntimeError):
    """Line search broke down; ``best`` holds the best trajectory seen."""

    def __init__(self, message: str, best: OptimizedTrajectory | None = None):
        super().__init__(message)
        self.best = best


class UnsafeTrajectoryError(RuntimeError):
    """Optimized trajectory still collides after all penalty escalations."""

    def __init__(self, message: str, best: OptimizedTrajectory | None = None):
        super().__init__(message)
        self.best = best


class CorridorAssignmentError(ValueError):
    """A checkpoint has no polygon to be checked against."""


@dataclass
class PenaltyWeights:
    rho: float = 1.0
    w_v: float = 1e4
    w_a: float = 1e4
    w_w: float = 1e4
    w_p: float = 1e5
    dT: float = 0.05  # checkpoint time step
    mu: float = 1e-2  # smoothed-L1 transition width
    margin: float = 1e-2  # corridor faces pulled inward by this much, meters

    def __post_init__(self):
        if min(self.rho, self.w_v, self.w_a, self.w_w, self.w_p) < 0:
            raise ValueError("penalty weights must be non-negative")
        if not (self.dT > 0 and self.mu > 0):
            raise ValueError("dT and mu must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")


@dataclass
class DynamicLimits:
    v_max: float = 2.0
    a_max: float = 2.0
    w_zmax: float = 1.5


def smoothed_l1(x: ArrayLike, mu: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """C2 relaxation of ``max(x, 0)``: cubic on ``[0, mu]``, ``x - mu/2`` beyond."""
    x = np.asarray(x, dtype=float)
    xm = np.clip(x / mu, 0.0, 1.0)
    f = np.where(x > mu, x - 0.5 * mu, (mu - 0.5 * np.maximum(x, 0.0)) * xm**3)
    df = np.where(x > mu, 1.0, xm * xm * (3.0 - 2.0 * xm))
    return f, df


def softplus(tau: ArrayLike) -> NDArray[np.float64]:
    return np.logaddexp(0.0, tau)


def softplus_inv(T: ArrayLike) -> NDArray[np.float64]:
    T = np.asarray(T, dtype=float)
    return T + np.log(-np.expm1(-T))


def _sigmoid(tau):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(tau, dtype=float)))


@dataclass(frozen=True, eq=False)
class Checkpoints:
    """Fixed checkpoint layout: ``K_i + 1`` trapezoid nodes on piece ``i``.

    ``weight`` already contains the ``1/K_i`` factor, so a checkpoint's time
    step is ``T_i * weight``.
    """

    piece: NDArray[np.int64]
    frac: NDArray[np.float64]
    weight: NDArray[np.float64]
    starts: NDArray[np.int64]

    @classmethod
    def for_times(cls, T: ArrayLike, dT: float) -> Checkpoints:
        T = np.asarray(T, dtype=float)
        K = np.maximum(1, np.ceil(T / dT - 1e-9).astype(np.int64))
        piece = np.repeat(np.arange(len(T)), K + 1)
        frac = np.concatenate([np.arange(k + 1) / k for k in K])
        w = np.concatenate([np.r_[0.5, np.ones(k - 1), 0.5] / k for k in K])
        starts = np.concatenate([[0], np.cumsum(K + 1)[:-1]])
        return cls(piece, frac, w, starts)


@dataclass
class _Eval:
    # per-checkpoint kinematics and the scatter helpers
    cps: Checkpoints
    B: NDArray  # (N, 7, 6)
    deriv: NDArray  # (N, 4, 3): position, velocity, acceleration, jerk
    dt: NDArray  # (N,) checkpoint step T_i * weight


def _evaluate(traj: MincoTrajectory, cps: Checkpoints) -> _Eval:
    t = cps.frac * traj.T[cps.piece]
    B = basis_all(t)
    c = traj.coeffs[cps.piece]
    deriv = np.einsum("nkm,nmc->nkc", B[:, :4], c)
    return _Eval(cps, B, deriv, traj.T[cps.piece] * cps.weight)


def _scatter_c(ev: _Eval, M: int, order: int, coef: NDArray) -> NDArray:
    """Sum ``coef[n, ch] * beta^(order)(t_n)`` into per-piece ``(M, 6, 3)`` gradients."""
    contrib = ev.B[:, order, :, None] * coef[:, None, :]
    return np.add.reduceat(contrib, ev.cps.starts, axis=0)


def _scatter_T(ev: _Eval, M: int, values: NDArray) -> NDArray:
    return np.add.reduceat(values, ev.cps.starts)


def smoothness_cost_and_grad(traj: MincoTrajectory, rho: float = 0.0):
    """Squared-jerk energy of all channels plus ``rho * sum(T)``.

    Returns ``(cost, dJ/dc (M, 6, 3), dJ/dT (M,))`` with coefficients held
    fixed for the time derivative.
    """
    Q = jerk_gram(traj.T)
    Qc = Q @ traj.coeffs
    cost = float(np.sum(traj.coeffs * Qc)) + rho * float(np.sum(traj.T))
    jerk_end = np.einsum("mn,mnc->mc", basis_all(traj.T)[:, 3], traj.coeffs)
    return cost, 2.0 * Qc, np.sum(jerk_end**2, axis=1) + rho


def feasibility_penalty(
    traj: MincoTrajectory,
    limits: DynamicLimits,
    weights: PenaltyWeights,
    cps: Checkpoints | None = None,
    _ev: _Eval | None = None,
):
    """Speed, acceleration and yaw-rate penalties.

    Returns ``(total, dJ/dc, dJ/dT, parts)`` where ``parts`` maps ``v``,
    ``a``, ``w`` to their weighted contributions.
    """
    cps = cps or Checkpoints.for_times(traj.T, weights.dT)
    ev = _ev or _evaluate(traj, cps)
    vel, acc, jerk = ev.deriv[:, 1], ev.deriv[:, 2], ev.deriv[:, 3]
    M = traj.M
    gc = np.zeros_like(traj.coeffs)
    gT = np.zeros(M)
    parts = {}
    zeros = np.zeros((len(vel), 3))
    terms = (
        ("v", weights.w_v, 1, np.sum(vel[:, :2] ** 2, 1) - limits.v_max**2, 2 * vel * [1, 1, 0], 2 * np.sum(vel[:, :2] * acc[:, :2], 1)),
        ("a", weights.w_a, 2, np.sum(acc[:, :2] ** 2, 1) - limits.a_max**2, 2 * acc * [1, 1, 0], 2 * np.sum(acc[:, :2] * jerk[:, :2], 1)),
        ("w", weights.w_w, 1, vel[:, 2] ** 2 - limits.w_zmax**2, 2 * vel * [0, 0, 1], 2 * vel[:, 2] * acc[:, 2]),
    )
    for name, w, order, G, dG_dderiv, dG_dt in terms:
        f, df = smoothed_l1(G, weights.mu)
        parts[name] = w * float(np.sum(ev.dt * f))
        if w == 0.0 or not np.any(df):
            continue
        scale = w * ev.dt * df
        gc += _scatter_c(ev, M, order, scale[:, None] * dG_dderiv + zeros)
        gT += _scatter_T(ev, M, w * cps.weight * f + scale * dG_dt * cps.frac)
    return sum(parts.values()), gc, gT, parts


@dataclass(frozen=True, eq=False)
class CorridorArrays:
    """Stacked H-representations: ``A (P, F, 2)``, ``b (P, F)``.

    ``room (P, F)`` is how far each face lies beyond the anchor body
    (unbounded when unknown); the penalty margin never exceeds it.
    """

    A: NDArray[np.float64]
    b: NDArray[np.float64]
    room: NDArray[np.float64] | None = None

    @classmethod
    def from_segments(cls, segments: list[CorridorSegment]) -> CorridorArrays:
        A = np.ascontiguousarray(np.stack([s.polygon.A for s in segments]), dtype=float)
        b = np.ascontiguousarray(np.stack([s.polygon.b for s in segments]), dtype=float)
        room = np.array([s.expansion for s in segments], dtype=float)
        return cls(A, b, room if room.shape == b.shape else None)

    def shrunk(self, margin: float) -> CorridorArrays:
        """Faces moved inward by ``margin``, but never past the anchor body."""
        cut = margin if self.room is None else np.minimum(margin, np.maximum(self.room, 0.0))
        return CorridorArrays(self.A, np.ascontiguousarray(self.b - cut), None)


def wholebody_violation(corr: CorridorArrays, poly_idx: NDArray, body: NDArray, pose: NDArray, mu: float):
    """Relaxed corridor violation of all body samples for each pose.

    Returns ``G (N,)`` and its gradient ``(N, 3)`` with respect to
    ``(x, y, psi)``.
    """
    return _kernels.corridor_violation(
        corr.A,
        corr.b,
        np.ascontiguousarray(poly_idx, dtype=np.int64),
        np.ascontiguousarray(body, dtype=float),
        np.ascontiguousarray(pose, dtype=float),
        float(mu),
    )


def wholebody_penalty(
    traj: MincoTrajectory,
    corridor: CorridorArrays | list[CorridorSegment],
    shape: RobotShape,
    weights: PenaltyWeights,
    cps: Checkpoints | None = None,
    _ev: _Eval | None = None,
):
    """Corridor penalty on the box edge samples.

    Checkpoints of piece ``i`` are scored against polygons ``i`` and
    ``i + 1`` and charged the smaller violation. Polygon faces are first
    moved inward by ``weights.margin`` (at most down to the anchor body) so
    that motion between checkpoints keeps some room.

    Returns ``(penalty, dJ/dc, dJ/dT)``.
    """
    if not isinstance(corridor, CorridorArrays):
        corridor = CorridorArrays.from_segments(corridor)
    n_poly = len(corridor.b)
    if n_poly < traj.M + 1:
        raise CorridorAssignmentError(f"{traj.M} pieces need {traj.M + 1} polygons, got {n_poly}")
    cps = cps or Checkpoints.for_times(traj.T, weights.dT)
    ev = _ev or _evaluate(traj, cps)
    pose = ev.deriv[:, 0]
    body = shape.body_edge_samples()
    if weights.margin:
        corridor = corridor.shrunk(weights.margin)
    G0, d0 = wholebody_violation(corridor, cps.piece, body, pose, weights.mu)
    G1, d1 = wholebody_violation(corridor, cps.piece + 1, body, pose, weights.mu)
    use1 = G1 < G0
    G = np.where(use1, G1, G0)
    dG = np.where(use1[:, None], d1, d0)
    w = weights.w_p
    penalty = w * float(np.sum(ev.dt * G))
    gc = np.zeros_like(traj.coeffs)
    gT = np.zeros(traj.M)
    if w and np.any(G > 0):
        scale = w * ev.dt
        gc = _scatter_c(ev, traj.M, 0, scale[:, None] * dG)
        dG_dt = np.sum(dG * ev.deriv[:, 1], axis=1)
        gT = _scatter_T(ev, traj.M, w * cps.weight * G + scale * dG_dt * cps.frac)
    return penalty, gc, gT


@dataclass
class OptimizationProblem:
    """Corridor, robot, boundary states and the search-derived initial guess.

    ``start`` and ``end`` are ``(3, 3)``: position/velocity/acceleration rows
    over x, y, yaw columns. There is one corridor segment per waypoint
    including both ends, so ``len(corridor) == M + 1``.
    """

    corridor: list[CorridorSegment]
    shape: RobotShape
    start: NDArray[np.float64]
    end: NDArray[np.float64]
    limits: DynamicLimits
    q0: NDArray[np.float64]
    T0: NDArray[np.float64]
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    grid: OccupancyGrid | None = None

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(3, 3)
        self.end = np.asarray(self.end, dtype=float).reshape(3, 3)
        self.T0 = np.asarray(self.T0, dtype=float).ravel()
        self.q0 = np.asarray(self.q0, dtype=float).reshape(len(self.T0) - 1, 3)
        if len(self.corridor) != len(self.T0) + 1:
            raise CorridorAssignmentError(
                f"{len(self.T0)} pieces need {len(self.T0) + 1} corridor segments, got {len(self.corridor)}"
            )
        if np.any(self.T0 <= 0):
            raise ValueError("initial durations must be positive")
        self.arrays = CorridorArrays.from_segments(self.corridor)

    @property
    def M(self) -> int:
        return len(self.T0)

    def pack(self, q: ArrayLike, T: ArrayLike) -> NDArray[np.float64]:
        return np.concatenate([np.asarray(q, dtype=float).ravel(), softplus_inv(T)])

    def unpack(self, z: NDArray) -> tuple[NDArray, NDArray]:
        n = 3 * (self.M - 1)
        return z[:n].reshape(self.M - 1, 3), z[n:]


def _objective_parts(problem: OptimizationProblem, q, T_raw, cps: Checkpoints):
    T = softplus(T_raw)
    traj = construct(problem.start, problem.end, q, T)
    w = problem.weights
    smooth, gc, gT = smoothness_cost_and_grad(traj, w.rho)
    ev = _evaluate(traj, cps)
    feas, fc, fT, parts = feasibility_penalty(traj, problem.limits, w, cps, ev)
    body, bc, bT = wholebody_penalty(traj, problem.arrays, problem.shape, w, cps, ev)
    gq, gTt = grad_propagate(traj, gc + fc + bc, gT + fT + bT)
    grad = np.concatenate([gq.ravel(), gTt * _sigmoid(T_raw)])
    breakdown = {"smoothness": smooth, "v": parts["v"], "a": parts["a"], "w": parts["w"], "p": body}
    return smooth + feas + body, grad, traj, breakdown


def total_objective(problem: OptimizationProblem, q: ArrayLike, T_raw: ArrayLike, cps: Checkpoints | None = None):
    """Objective value and gradient over ``(q.ravel(), T_raw)``.

    ``T_raw`` are unconstrained reals; durations are ``softplus(T_raw)``.
    """
    q = np.asarray(q, dtype=float).reshape(problem.M - 1, 3)
    T_raw = np.asarray(T_raw, dtype=float).ravel()
    cps = cps or Checkpoints.for_times(softplus(T_raw), problem.weights.dT)
    J, grad, _, _ = _objective_parts(problem, q, T_raw, cps)
    return J, grad


@dataclass
class OptimizedTrajectory:
    trajectory: MincoTrajectory
    iterations: int
    wall_time: float
    penalties: dict[str, float]
    history: list[dict[str, float]]
    escalations: int = 0
    status: str = ""


def validate_trajectory(grid: OccupancyGrid, shape: RobotShape, traj: MincoTrajectory, dt: float) -> bool:
    """Whole-body grid check of the trajectory sampled every ``dt`` seconds."""
    ts = traj.sample_times(dt)
    pose = traj.eval(ts, 0)
    return not poses_collide(grid, shape, pose).any()


def optimize(
    problem: OptimizationProblem,
    max_iter: int = 2000,
    memory: int = 8,
    g_tol: float = 1e-5,
    past: int = 3,
    delta: float = 1e-4,
    max_escalations: int = 3,
    validation_dt: float | None = None,
) -> OptimizedTrajectory:
    """L-BFGS solve with a posteriori collision validation and penalty escalation.

    After each solve the trajectory is checked against ``problem.grid`` (if
    any) every ``validation_dt`` seconds, by default half the checkpoint
    step. On a hit the corridor weight is raised tenfold, the checkpoint
    step is halved (excursions between checkpoints are invisible to the
    penalty) and the solve is warm-started from the current iterate.
    """
    t_start = time.perf_counter()
    weights = replace(problem.weights)
    z = problem.pack(problem.q0, problem.T0)
    scale = np.ones_like(z)
    scale[3 * (problem.M - 1) :] = TIME_VARIABLE_SCALE
    history: list[dict[str, float]] = []
    total_iter = 0
    best: OptimizedTrajectory | None = None
    for escalation in range(max_escalations + 1):
        prob = replace(problem, weights=weights)
        q_cur, tau_cur = prob.unpack(z)
        cps = Checkpoints.for_times(softplus(tau_cur), weights.dT)
        last = {}

        def fun(y, prob=prob, cps=cps, last=last):
            qq, tt = prob.unpack(y * scale)
            J, g, traj, parts = _objective_parts(prob, qq, tt, cps)
            last[y.tobytes()] = (traj, parts)
            if len(last) > 64:
                last.pop(next(iter(last)))
            return J, g * scale

        def record(it, x, f, g, last=last, base=total_iter):
            parts = last[x.tobytes()][1]
            history.append({"iteration": base + it, "objective": f, "grad_norm": float(np.linalg.norm(g)), **parts})

        try:
            res = minimize_lbfgs(fun, z / scale, memory=memory, g_tol=g_tol, max_iter=max_iter, past=past, delta=delta, callback=record)
        except LineSearchError as exc:
            qq, tt = prob.unpack(exc.x * scale)
            _, _, traj, parts = _objective_parts(prob, qq, tt, cps)
            best = OptimizedTrajectory(traj, total_iter, time.perf_counter() - t_start, parts, history, escalation, "line_search")
            raise OptimizationFailedError(str(exc), best) from None
        total_iter += res.iterations
        z = res.x * scale
        qq, tt = prob.unpack(z)
        _, _, traj, parts = _objective_parts(prob, qq, tt, cps)
        best = OptimizedTrajectory(traj, total_iter, time.perf_counter() - t_start, parts, history, escalation, res.status)
        log.debug("solve %d: %d iterations, status %s, penalties %s", escalation, res.iterations, res.status, parts)
        check_dt = validation_dt or 0.5 * weights.dT
        if problem.grid is None or validate_trajectory(problem.grid, problem.shape, traj, check_dt):
            return best
        weights = replace(weights, w_p=weights.w_p * 10.0, dT=weights.dT * 0.5)
    raise UnsafeTrajectoryError(f"trajectory still collides after {max_escalations} penalty escalations", best)


def initial_guess(times: ArrayLike, states: ArrayLike) -> tuple[NDArray, NDArray]:
    """Waypoints and durations from constraint-point times and ``[x, y, psi, ...]`` states."""
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    T0 = np.maximum(np.diff(times), MIN_INITIAL_TIME)
    q0 = states[1:-1, :3]
    return q0, T0
