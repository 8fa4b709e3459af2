"""Command-line harness: plan one scenario, a directory of them, or validate a trajectory.

    python -m wholebody_planner plan <scenario> --out <dir> [--svg] [--repeat N]
    python -m wholebody_planner batch <dir> [--out DIR] [--jobs N]
    python -m wholebody_planner validate <map> <trajectory.csv> <length>x<width>
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import re
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .corridor import CorridorSegment, InvalidAnchorError, corridor_along_path, format_corridor
from .geometry import Pose2, RobotShape, unwrap_near
from .gridmap import InvalidMapError, MapParseError, OccupancyGrid, load_map
from .minco import ConstructionError, MincoTrajectory, PropagationError
from .optimizer import (
    OptimizationFailedError,
    OptimizationProblem,
    OptimizedTrajectory,
    UnsafeTrajectoryError,
    initial_guess,
    optimize,
)
from .render import render_svg
from .scenario import Scenario, ScenarioError, bundled_dir, load_scenario
from .search import PathResult, SearchError, poses_collide, search

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t", "x", "y", "psi", "vx", "vy", "omega", "ax", "ay")
STAGES = ("load", "search", "corridor", "optimize", "validate")


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` is one of :data:`STAGES`."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message


@dataclass
class RunReport:
    name: str
    success: bool = False
    failed_stage: str | None = None
    message: str = ""
    collision_free: bool = False
    # wall-clock medians, seconds
    load_time: float | None = None
    search_time: float | None = None
    corridor_time: float | None = None
    optimize_time: float | None = None
    validate_time: float | None = None
    total_time: float | None = None
    repeats: int = 1
    # trajectory metrics
    jerk_cost: float | None = None
    length: float | None = None
    duration: float | None = None
    max_speed: float | None = None
    max_acc: float | None = None
    max_yaw_rate: float | None = None
    # stage details
    expansions: int | None = None
    search_cost: float | None = None
    corridor_segments: int | None = None
    iterations: int | None = None
    escalations: int | None = None
    solver_status: str | None = None
    penalties: dict[str, float] = field(default_factory=dict)
    limits: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class PlanOutcome:
    grid: OccupancyGrid
    path: PathResult
    corridor: list[CorridorSegment]
    result: OptimizedTrajectory
    timings: dict[str, float]

    @property
    def trajectory(self) -> MincoTrajectory:
        return self.result.trajectory


def dispersed_jerk(traj: MincoTrajectory, dt: float = 0.01) -> float:
    """Sum over ``t = i * dt`` (``i = 0 .. floor(T / dt)``) of squared position and yaw jerk, times ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(math.floor(traj.duration / dt + 1e-9))
    ts = np.minimum(np.arange(n + 1) * dt, traj.duration)
    j = traj.eval(ts, 3)
    return float(np.sum(j * j) * dt)


def trajectory_metrics(traj: MincoTrajectory, dt: float = 0.01) -> dict[str, float]:
    ts = traj.sample_times(dt)
    p, v, a = traj.eval(ts, 0), traj.eval(ts, 1), traj.eval(ts, 2)
    return {
        "length": float(np.sum(np.hypot(np.diff(p[:, 0]), np.diff(p[:, 1])))),
        "duration": traj.duration,
        "max_speed": float(np.max(np.hypot(v[:, 0], v[:, 1]))),
        "max_acc": float(np.max(np.hypot(a[:, 0], a[:, 1]))),
        "max_yaw_rate": float(np.max(np.abs(v[:, 2]))),
    }


def trajectory_table(traj: MincoTrajectory, dt: float) -> NDArray[np.float64]:
    """Rows ``t, x, y, psi, vx, vy, omega, ax, ay`` every ``dt`` (end time included)."""
    ts = traj.sample_times(dt)
    p, v, a = traj.eval(ts, 0), traj.eval(ts, 1), traj.eval(ts, 2)
    return np.column_stack([ts, p, v, a[:, :2]])


def format_trajectory_csv(table: ArrayLike) -> str:
    buf = io.StringIO()
    buf.write(",".join(TRAJECTORY_COLUMNS) + "\n")
    for row in np.asarray(table):
        buf.write(",".join(f"{v:.12g}" for v in row) + "\n")
    return buf.getvalue()


def read_trajectory_csv(path: str | Path) -> NDArray[np.float64]:
    """``(n, 4)`` array of ``t, x, y, psi`` from a trajectory CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("t", "x", "y", "psi") if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = [[float(r[c]) for c in ("t", "x", "y", "psi")] for r in reader]
    return np.array(rows, dtype=float).reshape(-1, 4)


def validate_poses(grid: OccupancyGrid, shape: RobotShape, poses: ArrayLike) -> NDArray[np.bool_]:
    """Per-pose collision flags from exact footprint rasterization."""
    return poses_collide(grid, shape, np.asarray(poses, dtype=float)[:, :3])


def _boundary(state, psi: float) -> NDArray[np.float64]:
    return np.array([[state.x, state.y, psi], [state.vx, state.vy, 0.0], [0.0, 0.0, 0.0]])


def plan(scenario: Scenario, grid: OccupancyGrid | None = None) -> PlanOutcome:
    """Run search, corridor generation, optimization and validation once.

    Raises:
        PipelineError: naming the stage that failed.
    """
    timings = {}
    t0 = time.perf_counter()
    if grid is None:
        try:
            grid = scenario.load_grid()
        except (ScenarioError, MapParseError, InvalidMapError, OSError) as exc:
            raise PipelineError("load", str(exc)) from None
    shape = scenario.shape
    t1 = time.perf_counter()
    timings["load"] = t1 - t0

    try:
        path = search(grid, shape, scenario.search_limits(), scenario.start, scenario.goal)
    except SearchError as exc:
        raise PipelineError("search", f"{type(exc).__name__}: {exc}") from None
    t2 = time.perf_counter()
    timings["search"] = t2 - t1

    goal = scenario.goal
    final_psi = float(path.dense_states(1)[1][-1, 2])
    goal_psi = unwrap_near(goal.psi, final_psi)
    end_pose = Pose2(goal.x, goal.y, goal_psi)
    step = scenario.corridor_step or None
    try:
        times, states, corridor = corridor_along_path(
            grid, shape, path, scenario.corridor_spacing, step, scenario.corridor_max_expand, end_pose
        )
    except InvalidAnchorError as exc:
        raise PipelineError("corridor", str(exc)) from None
    states = states.copy()
    if len(states) == 1:
        times = np.array([0.0, 0.0])
        states = np.vstack([states, states])
        corridor = corridor * 2
    states[-1, 3:5] = [goal.vx, goal.vy]
    t3 = time.perf_counter()
    timings["corridor"] = t3 - t2

    q0, T0 = initial_guess(times, states)
    start = scenario.start
    problem = OptimizationProblem(
        corridor,
        shape,
        _boundary(start, start.psi),
        _boundary(goal, goal_psi),
        scenario.dynamic_limits(),
        q0,
        T0,
        scenario.weights(),
        grid,
    )
    try:
        result = optimize(problem, max_iter=scenario.max_iter, validation_dt=scenario.sample_dt)
    except (OptimizationFailedError, UnsafeTrajectoryError) as exc:
        raise PipelineError("optimize", f"{type(exc).__name__}: {exc}") from None
    except (ConstructionError, PropagationError, ValueError) as exc:
        raise PipelineError("optimize", f"{type(exc).__name__}: {exc}") from None
    t4 = time.perf_counter()
    timings["optimize"] = t4 - t3

    table = trajectory_table(result.trajectory, scenario.sample_dt)
    hits = validate_poses(grid, shape, table[:, 1:4])
    timings["validate"] = time.perf_counter() - t4
    if hits.any():
        first = float(table[np.argmax(hits), 0])
        raise PipelineError("validate", f"{int(hits.sum())} sampled poses collide, first at t={first:.3f} s")
    timings["total"] = sum(timings.values())
    return PlanOutcome(grid, path, corridor, result, timings)


def _diagnostics_csv(result: OptimizedTrajectory) -> str:
    cols = ("iteration", "objective", "grad_norm", "smoothness", "v", "a", "w", "p")
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for row in result.history:
        buf.write(",".join(f"{row[c]:.12g}" for c in cols) + "\n")
    return buf.getvalue()


def run(scenario: Scenario, out_dir: str | Path | None = None, svg: bool = False, repeat: int | None = None) -> RunReport:
    """Plan ``repeat`` times (timings are medians), write artifacts, return the report.

    Artifacts in ``out_dir``: ``report.json`` always; on success also
    ``trajectory.csv``, ``corridor.txt``, ``diagnostics.csv`` and, with
    ``svg``, ``plan.svg``.
    """
    repeat = repeat or scenario.repeat
    report = RunReport(scenario.name, repeats=repeat)
    report.limits = {"v_max": scenario.v_max, "a_max": scenario.a_max, "w_max": scenario.w_max}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    outcomes, timings = [], []
    try:
        for _ in range(repeat):
            outcome = plan(scenario)
            outcomes.append(outcome)
            timings.append(outcome.timings)
    except PipelineError as exc:
        report.failed_stage = exc.stage
        report.message = exc.message
        if out is not None:
            (out / "report.json").write_text(report.to_json())
        return report

    first = outcomes[0]
    for stage in (*STAGES, "total"):
        setattr(report, f"{stage}_time", statistics.median(t[stage] for t in timings))
    traj = first.trajectory
    report.success = True
    report.collision_free = True
    report.jerk_cost = dispersed_jerk(traj, scenario.jerk_dt)
    for k, v in trajectory_metrics(traj, scenario.sample_dt).items():
        setattr(report, k, v)
    report.expansions = first.path.expansions
    report.search_cost = first.path.cost
    report.corridor_segments = len(first.corridor)
    report.iterations = first.result.iterations
    report.escalations = first.result.escalations
    report.solver_status = first.result.status
    report.penalties = {k: float(v) for k, v in first.result.penalties.items()}
    if out is not None:
        (out / "trajectory.csv").write_text(format_trajectory_csv(trajectory_table(traj, scenario.sample_dt)))
        (out / "corridor.txt").write_text(format_corridor(first.corridor))
        (out / "diagnostics.csv").write_text(_diagnostics_csv(first.result))
        if svg:
            doc = render_svg(first.grid, first.path, first.corridor, traj, scenario.shape, scenario.footprint_interval)
            (out / "plan.svg").write_text(doc)
        (out / "report.json").write_text(report.to_json())
    return report


def parse_shape(tokens: list[str]) -> RobotShape:
    """``["1.2x0.6"]``, ``["1.2,0.6"]`` or ``["1.2", "0.6"]``; the longer side is the length."""
    parts = [p for tok in tokens for p in re.split(r"[x×,*]", tok.lower()) if p.strip()]
    if len(parts) != 2:
        raise ValueError(f"shape needs two numbers, got {' '.join(tokens)!r}")
    a, b = (float(p) for p in parts)
    return RobotShape(max(a, b), min(a, b))


def _resolve_scenario(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    bundled = bundled_dir() / f"{arg}.cfg"
    if bundled.exists():
        return bundled
    raise ScenarioError(f"scenario not found: {arg}")


def _summary_line(rep: RunReport) -> str:
    if not rep.success:
        return f"{rep.name}: FAILED at {rep.failed_stage}: {rep.message}"
    return (
        f"{rep.name}: ok  total {rep.total_time:.3f} s (search {rep.search_time:.3f}, optimize {rep.optimize_time:.3f})"
        f"  jerk {rep.jerk_cost:.2f}  length {rep.length:.2f} m  duration {rep.duration:.2f} s"
    )


def _cmd_plan(args) -> int:
    try:
        scenario = load_scenario(_resolve_scenario(args.scenario))
    except (ScenarioError, OSError) as exc:
        print(f"error: stage=load: {exc}", file=sys.stderr)
        return 2
    rep = run(scenario, args.out, svg=args.svg, repeat=args.repeat)
    print(_summary_line(rep))
    if not rep.success:
        print(f"error: stage={rep.failed_stage}: {rep.message}", file=sys.stderr)
        return 1
    return 0


def _batch_worker(job: tuple[str, str, bool, int | None]) -> dict:
    path, out, svg, repeat = job
    try:
        scenario = load_scenario(path)
    except (ScenarioError, OSError) as exc:
        return asdict(RunReport(Path(path).stem, failed_stage="load", message=str(exc)))
    return asdict(run(scenario, Path(out) / scenario.name, svg=svg, repeat=repeat))


def _cmd_batch(args) -> int:
    root = Path(args.dir)
    files = sorted(root.glob("*.cfg"))
    if not files:
        print(f"error: no *.cfg scenarios in {root}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else root / "out"
    jobs = [(str(f), str(out), args.svg, args.repeat) for f in files]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_batch_worker, jobs))
    else:
        reports = [_batch_worker(j) for j in jobs]
    reports.sort(key=lambda r: r["name"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
    for r in reports:
        print(_summary_line(RunReport(**r)))
    return 0 if all(r["success"] for r in reports) else 1


def _cmd_validate(args) -> int:
    try:
        grid = load_map(args.map)
        shape = parse_shape(args.shape)
        table = read_trajectory_csv(args.trajectory)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    hits = validate_poses(grid, shape, table[:, 1:4])
    verdict = {"poses": int(len(hits)), "colliding": int(hits.sum()), "collision_free": bool(not hits.any())}
    if hits.any():
        verdict["first_collision_t"] = float(table[np.argmax(hits), 0])
    print(json.dumps(verdict, sort_keys=True))
    return 0 if verdict["collision_free"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wholebody-planner", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan one scenario")
    p.add_argument("scenario", help="scenario file, or the name of a bundled scenario")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--svg", action="store_true", help="also write plan.svg")
    p.add_argument("--repeat", type=int, default=None, help="timing repeats (default from scenario)")
    p.set_defaults(func=_cmd_plan)

    b = sub.add_parser("batch", help="plan every *.cfg scenario in a directory")
    b.add_argument("dir")
    b.add_argument("--out", default=None, help="output root (default <dir>/out)")
    b.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    b.add_argument("--svg", action="store_true")
    b.add_argument("--repeat", type=int, default=None)
    b.set_defaults(func=_cmd_batch)

    v = sub.add_parser("validate", help="check a trajectory CSV against a map")
    v.add_argument("map")
    v.add_argument("trajectory")
    v.add_argument("shape", nargs="+", help="robot size, e.g. 1.2x0.6 or 1.2 0.6")
    v.set_defaults(func=_cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
