import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import oracle_box_hits
from gradcheck import GRADIENT_PATHS, LIMITS, SHAPE, random_problem
from wholebody_planner.cli import plan
from wholebody_planner.corridor import CorridorSegment
from wholebody_planner.geometry import ConvexPolygon, Pose2, RobotShape
from wholebody_planner.gridmap import OccupancyGrid
from wholebody_planner.minco import construct, jerk_energy
from wholebody_planner.optimizer import (
    Checkpoints,
    CorridorAssignmentError,
    DynamicLimits,
    OptimizationProblem,
    PenaltyWeights,
    feasibility_penalty,
    optimize,
    smoothed_l1,
    smoothness_cost_and_grad,
    softplus,
    softplus_inv,
    total_objective,
    wholebody_penalty,
)
from wholebody_planner.scenario import Scenario

NO_WP = np.zeros((0, 3))


def line_states(p0, p1, v=(0, 0, 0)):
    start, end = np.zeros((3, 3)), np.zeros((3, 3))
    start[0], end[0] = p0, p1
    start[1] = end[1] = v
    return start, end


def big_box(center, psi=0.0, half=20.0):
    c = np.asarray(center, float)
    return CorridorSegment(Pose2(c[0], c[1], psi), ConvexPolygon.oriented_box(c, psi, (half,) * 4), (half,) * 4)


@pytest.mark.parametrize("path", sorted(GRADIENT_PATHS))
def test_gradient_paths_match_finite_differences(path):
    rng = np.random.default_rng(7)
    errors = [GRADIENT_PATHS[path](rng) for _ in range(15)]
    assert max(errors) < 1e-5


def test_random_problems_actually_violate():
    # the gradient checks above would be vacuous on zero penalties
    rng = np.random.default_rng(7)
    w = PenaltyWeights()
    active_f = active_p = 0
    for _ in range(30):
        start, end, q, T, segs = random_problem(rng)
        traj = construct(start, end, q, T)
        active_f += feasibility_penalty(traj, LIMITS, w)[0] > 0
        active_p += wholebody_penalty(traj, segs, SHAPE, w)[0] > 0
    assert active_f >= 25 and active_p >= 25


def test_smoothed_l1_shape():
    x = np.array([-1.0, 0.0, 0.005, 0.01, 0.5])
    f, df = smoothed_l1(x, 0.01)
    assert f[0] == f[1] == 0.0 and df[0] == df[1] == 0.0
    assert f[4] == pytest.approx(0.5 - 0.005)
    assert df[3] == pytest.approx(1.0) and df[4] == 1.0
    assert 0 < f[2] < 0.005


def test_zero_trajectory_smoothness():
    traj = construct(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((1, 3)), [0.7, 1.1])
    cost, gc, _ = smoothness_cost_and_grad(traj, rho=2.0)
    assert cost == pytest.approx(2.0 * 1.8)
    assert np.all(gc == 0)


def test_rest_to_rest_smoothness():
    traj = construct(*line_states([0, 0, 0], [1, 0, 0]), NO_WP, [1.0])
    assert smoothness_cost_and_grad(traj, rho=1.0)[0] == pytest.approx(721.0)


def test_below_limits_zero_penalty():
    traj = construct(*line_states([0, 0, 0], [1, 1, 0.2]), NO_WP, [10.0])
    total, gc, gT, parts = feasibility_penalty(traj, DynamicLimits(), PenaltyWeights())
    assert total == 0.0 and set(parts.values()) == {0.0}
    assert np.all(gc == 0) and np.all(gT == 0)


def test_double_speed_violation():
    # constant velocity 2 v_max: G_v = 3 v_max^2 at every checkpoint
    v_max, T, w = 1.0, 2.0, PenaltyWeights()
    traj = construct(*line_states([0, 0, 0], [2 * v_max * T, 0, 0], v=(2 * v_max, 0, 0)), NO_WP, [T])
    _, _, _, parts = feasibility_penalty(traj, DynamicLimits(v_max, 100.0, 100.0), w)
    assert parts["a"] == 0 and parts["w"] == 0
    assert parts["v"] == pytest.approx(w.w_v * T * (3 * v_max**2 - w.mu / 2), rel=1e-9)


def test_inside_corridor_zero_penalty():
    traj = construct(*line_states([0, 0, 0], [3, 1, 0.5]), np.array([[1.5, 0.5, 0.2]]), [1.0, 1.0])
    segs = [big_box([0, 0]), big_box([1.5, 0.5]), big_box([3, 1])]
    pen, gc, gT = wholebody_penalty(traj, segs, SHAPE, PenaltyWeights())
    assert pen == 0.0 and np.all(gc == 0) and np.all(gT == 0)


def test_square_robot_spinning_in_roomy_box():
    square = RobotShape(0.4, 0.4)
    traj = construct(*line_states([0, 0, 0], [0, 0, 2 * math.pi]), NO_WP, [3.0])
    # the circumscribed circle has radius 0.283 < 0.3 - margin
    seg = CorridorSegment(Pose2(0, 0, 0), ConvexPolygon.oriented_box((0, 0), 0.0, (0.3,) * 4), (0.1,) * 4)
    pen, gc, _ = wholebody_penalty(traj, [seg, seg], square, PenaltyWeights())
    assert pen == 0.0
    assert np.all(gc[:, :, 2] == 0)


def test_margin_never_cuts_into_anchor_body():
    # a polygon equal to the body box: hovering at the anchor costs nothing
    anchor = Pose2(2.0, 1.0, 0.4)
    seg = CorridorSegment(anchor, ConvexPolygon.oriented_box((2.0, 1.0), 0.4, (0.3, 0.15, 0.3, 0.15)), (0.0,) * 4)
    hover = np.zeros((3, 3))
    hover[0] = [2.0, 1.0, 0.4]
    traj = construct(hover, hover, NO_WP, [1.0])
    assert wholebody_penalty(traj, [seg, seg], SHAPE, PenaltyWeights(margin=0.05))[0] < 1e-20  # boundary samples sit on the faces
    # with room on a face, the margin applies in full there
    roomy = CorridorSegment(anchor, ConvexPolygon.oriented_box((2.0, 1.0), 0.4, (0.33, 0.15, 0.3, 0.15)), (0.03, 0, 0, 0))
    moved = hover.copy()
    moved[0, :2] += 0.025 * np.array([np.cos(0.4), np.sin(0.4)])
    traj = construct(moved, moved, NO_WP, [1.0])
    assert wholebody_penalty(traj, [roomy, roomy], SHAPE, PenaltyWeights(margin=0.01))[0] > 0.0
    assert wholebody_penalty(traj, [roomy, roomy], SHAPE, PenaltyWeights(margin=0.0))[0] < 1e-20


def test_corridor_count_mismatch():
    traj = construct(*line_states([0, 0, 0], [1, 0, 0]), NO_WP, [1.0])
    with pytest.raises(CorridorAssignmentError):
        wholebody_penalty(traj, [big_box([0, 0])], SHAPE, PenaltyWeights())
    with pytest.raises(CorridorAssignmentError):
        OptimizationProblem([big_box([0, 0])], SHAPE, *line_states([0, 0, 0], [1, 0, 0]), DynamicLimits(), NO_WP, [1.0])


def test_invalid_weights():
    with pytest.raises(ValueError):
        PenaltyWeights(w_p=-1)
    with pytest.raises(ValueError):
        PenaltyWeights(dT=0)
    with pytest.raises(ValueError):
        PenaltyWeights(mu=0)


def test_rho_only_objective_is_jerk_plus_time(rng):
    start, end, q, T, segs = random_problem(rng)
    weights = PenaltyWeights(rho=0.7, w_v=0, w_a=0, w_w=0, w_p=0)
    problem = OptimizationProblem(segs, SHAPE, start, end, LIMITS, q, T, weights)
    J, g = total_objective(problem, q, softplus_inv(T))
    assert J == pytest.approx(jerk_energy(construct(start, end, q, T)) + 0.7 * T.sum(), rel=1e-9)
    assert g.shape == (3 * (len(T) - 1) + len(T),)


@pytest.mark.parametrize("name", ["w_v", "w_a", "w_w", "w_p"])
def test_doubling_weight_doubles_its_term(rng, name):
    start, end, q, T, segs = random_problem(rng)
    traj = construct(start, end, q, T)
    key = {"w_v": "v", "w_a": "a", "w_w": "w"}.get(name)
    w1 = PenaltyWeights()
    w2 = replace(w1, **{name: 2 * getattr(w1, name)})
    if key:
        p1 = feasibility_penalty(traj, LIMITS, w1)[3][key]
        p2 = feasibility_penalty(traj, LIMITS, w2)[3][key]
    else:
        p1 = wholebody_penalty(traj, segs, SHAPE, w1)[0]
        p2 = wholebody_penalty(traj, segs, SHAPE, w2)[0]
    assert p1 > 0
    assert p2 == pytest.approx(2 * p1, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_penalties_non_negative(seed):
    rng = np.random.default_rng(seed)
    start, end, q, T, segs = random_problem(rng)
    traj = construct(start, end, q, T)
    w = PenaltyWeights(mu=float(rng.uniform(1e-3, 1e-1)))
    assert feasibility_penalty(traj, LIMITS, w)[0] >= 0
    assert wholebody_penalty(traj, segs, SHAPE, w)[0] >= 0


@given(st.floats(1e-3, 50.0))
def test_softplus_round_trip(T):
    assert softplus(softplus_inv(T)) == pytest.approx(T, rel=1e-9)
    assert softplus(-50.0) > 0


def test_checkpoint_layout():
    cps = Checkpoints.for_times([0.1, 0.22], 0.05)
    assert list(np.bincount(cps.piece)) == [3, 6]
    assert np.allclose(np.add.reduceat(cps.weight, cps.starts), 1.0)


def straight_problem(weights=None, limits=None):
    """Open space, rest to rest along +x, one roomy box per meter."""
    n = 8
    xs = np.linspace(1.0, 9.0, n + 1)
    segs = [big_box([x, 3.0], half=2.0) for x in xs]
    q0 = np.stack([xs[1:-1], np.full(n - 1, 3.0), np.zeros(n - 1)], axis=1)
    grid = OccupancyGrid(np.zeros((60, 100), bool), 0.1)
    return OptimizationProblem(
        segs, SHAPE, *line_states([1, 3, 0], [9, 3, 0]), limits or DynamicLimits(), q0, np.full(n, 1.0), weights or PenaltyWeights(), grid
    )


def test_open_straight_line_converges():
    result = optimize(straight_problem())
    traj = result.trajectory
    assert result.iterations < 300
    assert result.penalties["p"] == 0.0
    assert sum(result.penalties[k] for k in "vaw") < 1e-3
    assert np.allclose(traj.eval(traj.duration), [9, 3, 0], atol=1e-9)
    ts = traj.sample_times(0.05)
    assert np.max(np.abs(traj.eval(ts)[:, 1] - 3.0)) < 1e-6


def test_history_monotone_within_each_solve():
    result = optimize(straight_problem())
    obj = [h["objective"] for h in result.history]
    assert len(obj) == result.iterations
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(obj, obj[1:]))


@pytest.mark.parametrize(
    "limits, turn",
    [(DynamicLimits(v_max=1.0, a_max=2.0, w_zmax=1.0), 3 * math.pi), (DynamicLimits(v_max=5.0, a_max=0.5, w_zmax=1.0), 0.0)],
)
def test_zero_collision_weight_limit_slack(limits, turn):
    # a heavy time weight drives the binding limits to their soft bound
    problem = straight_problem(PenaltyWeights(rho=100.0, w_p=0.0), limits)
    problem = replace(problem, T0=np.full(problem.M, 0.3), end=np.array([[9, 3, turn], [0, 0, 0], [0, 0, 0]]))
    problem.q0[:, 2] = np.linspace(0, turn, problem.M + 1)[1:-1]
    traj = optimize(problem).trajectory
    ts = traj.sample_times(0.5 * problem.weights.dT)
    v, a = traj.eval(ts, 1), traj.eval(ts, 2)
    ratios = np.array(
        [np.max(np.hypot(v[:, 0], v[:, 1])) / limits.v_max, np.max(np.hypot(a[:, 0], a[:, 1])) / limits.a_max, np.max(np.abs(v[:, 2])) / limits.w_zmax]
    )
    assert np.all(ratios <= 1.05)
    assert np.max(ratios) >= 0.95  # not vacuous: some limit is active


def test_narrow_gap_yaw_alignment():
    # wall across x = 5 with an opening of robot width + 0.2 m; the robot
    # starts and ends broadside to the opening and must turn to pass
    res = 0.1
    cells = np.zeros((60, 100), bool)
    cells[:, 50:53] = True
    cells[28:33, 50:53] = False  # 2.8 .. 3.3: 0.5 m opening
    grid = OccupancyGrid(cells, res)
    sc = Scenario(length=1.2, width=0.3, start_x=2.0, start_y=3.05, start_psi=math.pi / 2, goal_x=8.0, goal_y=3.05, goal_psi=math.pi / 2)
    out = plan(sc, grid)
    traj = out.trajectory
    ts = traj.sample_times(0.01)
    pose = traj.eval(ts)
    assert not any(oracle_box_hits(grid, sc.shape, p) for p in pose[::5])
    crossing = np.abs(pose[:, 0] - 5.15) < 0.15
    assert crossing.any()
    misalign = np.abs(np.sin(pose[crossing, 2]))
    assert np.max(misalign) < math.sin(math.radians(10))
