import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import oracle_box_hits
from wholebody_planner.cli import (
    dispersed_jerk,
    format_trajectory_csv,
    main,
    parse_shape,
    read_trajectory_csv,
    run,
)
from wholebody_planner.geometry import Pose2, RobotShape, obb_vertices
from wholebody_planner.gridmap import OccupancyGrid, load_map
from wholebody_planner.maps import BUILDERS
from wholebody_planner.minco import construct, jerk_energy
from wholebody_planner.render import PageTransform, render_svg
from wholebody_planner.scenario import ScenarioError, bundled_dir, load_scenario, parse_scenario

SVG = "{http://www.w3.org/2000/svg}"
BUNDLED = bundled_dir()


def test_parse_scenario_values():
    sc = parse_scenario("map = x.map\nstart_psi = pi/2  # comment\ngoal_psi = -0.5pi\nr = 2\n; note\n\nlength = 0.4\nwidth = 1.0\n")
    assert sc.start_psi == pytest.approx(math.pi / 2)
    assert sc.goal_psi == pytest.approx(-math.pi / 2)
    assert sc.r == 2 and isinstance(sc.r, int)
    assert sc.shape == RobotShape(1.0, 0.4)


def test_parse_scenario_errors():
    with pytest.raises(ScenarioError, match="unknown scenario key"):
        parse_scenario("speed = 3\n")
    with pytest.raises(ScenarioError):
        parse_scenario("v_max = fast\n")
    with pytest.raises(ScenarioError):
        parse_scenario("v_max = 0\n")
    with pytest.raises(ScenarioError):
        parse_scenario("length = 1\n").load_grid()


def test_parse_shape_forms():
    assert parse_shape(["1.2x0.6"]) == RobotShape(1.2, 0.6)
    assert parse_shape(["0.6,1.2"]) == RobotShape(1.2, 0.6)
    assert parse_shape(["1.2", "0.6"]) == RobotShape(1.2, 0.6)
    with pytest.raises(ValueError):
        parse_shape(["1.2"])


def test_dispersed_jerk_zero():
    traj = construct(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((0, 3)), [2.0])
    assert dispersed_jerk(traj) == 0.0


def test_dispersed_jerk_cubic():
    # x = t^3 is the unique quintic with these boundary states
    end = np.zeros((3, 3))
    end[:, 0] = [1.0, 3.0, 6.0]
    traj = construct(np.zeros((3, 3)), end, np.zeros((0, 3)), [1.0])
    assert np.allclose(traj.coeffs[0, :, 0], [0, 0, 0, 1, 0, 0], atol=1e-12)
    assert dispersed_jerk(traj, 1e-4) == pytest.approx(36.0, rel=1e-3)
    with pytest.raises(ValueError):
        dispersed_jerk(traj, 0.0)


def test_dispersed_jerk_converges(rng):
    for _ in range(5):
        M = int(rng.integers(1, 5))
        traj = construct(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), rng.normal(size=(M - 1, 3)), rng.uniform(0.5, 2, M))
        assert dispersed_jerk(traj, 1e-3) == pytest.approx(jerk_energy(traj), rel=1e-2)


def test_svg_frame_only():
    root = ET.fromstring(render_svg())
    assert root.tag == SVG + "svg"
    assert [c.get("id") for c in root] == ["frame"]
    root = ET.fromstring(render_svg(OccupancyGrid(np.zeros((10, 20), bool), 0.1)))
    assert [c.get("id") for c in root] == ["frame"]


@pytest.mark.parametrize("duration, interval", [(3.0, 0.5), (3.2, 0.5), (0.4, 0.5), (7.0, 0.3)])
def test_svg_footprint_count(duration, interval):
    end = np.zeros((3, 3))
    end[0] = [4, 1, 1]
    traj = construct(np.zeros((3, 3)), end, np.zeros((0, 3)), [duration])
    root = ET.fromstring(render_svg(traj=traj, shape=RobotShape(1.2, 0.6), footprint_interval=interval))
    prints = root.findall(f".//{SVG}polygon[@class='footprint']")
    assert len(prints) == math.floor(duration / interval + 1e-9) + 1


def test_svg_corners_match_page_transform():
    grid = OccupancyGrid(np.zeros((40, 60), bool), 0.1)
    end = np.zeros((3, 3))
    end[0] = [5, 3, 1.2]
    start = np.zeros((3, 3))
    start[0] = [1, 1, 0]
    traj = construct(start, end, np.zeros((0, 3)), [2.0])
    shape = RobotShape(1.2, 0.6)
    width_px, margin = 600.0, 10.0
    root = ET.fromstring(render_svg(grid, traj=traj, shape=shape, footprint_interval=0.5, width_px=width_px, margin=margin))
    page = PageTransform(0.0, 4.0, width_px / 6.0, margin)
    prints = root.findall(f".//{SVG}polygon[@class='footprint']")
    for k, poly in enumerate(prints):
        pts = np.array([[float(v) for v in p.split(",")] for p in poly.get("points").split()])
        pose = traj.eval(min(0.5 * k, traj.duration))
        expect = page.apply(obb_vertices(shape, Pose2(*pose)))
        assert np.allclose(pts, expect, atol=0.006)


def test_bundled_maps_match_builders():
    for name, build in BUILDERS.items():
        assert np.array_equal(load_map(BUNDLED / f"{name}.map").cells, build().cells)


def test_plan_open_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "open"
    assert main(["plan", "open", "--out", str(out), "--svg", "--repeat", "1"]) == 0
    assert "open: ok" in capsys.readouterr().out
    for f in ("report.json", "trajectory.csv", "corridor.txt", "diagnostics.csv", "plan.svg"):
        assert (out / f).is_file()
    rep = json.loads((out / "report.json").read_text())
    assert rep["success"] and rep["collision_free"]
    assert rep["jerk_cost"] < 5.0
    table = read_trajectory_csv(out / "trajectory.csv")
    # near-straight: lateral deviation from y = 3 stays small
    assert np.max(np.abs(table[:, 2] - 3.0)) < 0.05
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,x,y,psi,vx,vy,omega,ax,ay"
    ET.fromstring((out / "plan.svg").read_text())


def test_success_means_standalone_collision_free(tmp_path):
    sc = load_scenario(BUNDLED / "gap_wide.cfg")
    rep = run(sc, tmp_path, repeat=1)
    assert rep.success
    table = read_trajectory_csv(tmp_path / "trajectory.csv")
    assert np.allclose(np.diff(table[:, 0])[:-1], 0.01)
    grid = load_map(BUNDLED / "narrow_gap.map")
    assert not any(oracle_box_hits(grid, sc.shape, row[1:4]) for row in table)
    # the validate subcommand agrees
    assert main(["validate", str(BUNDLED / "narrow_gap.map"), str(tmp_path / "trajectory.csv"), f"{sc.length}x{sc.width}"]) == 0
    for key, limit in (("max_speed", sc.v_max), ("max_acc", sc.a_max), ("max_yaw_rate", sc.w_max)):
        assert getattr(rep, key) <= 1.05 * limit


def test_goal_inside_wall_fails_at_search(tmp_path, capsys):
    cfg = tmp_path / "blocked.cfg"
    cfg.write_text(f"map = {BUNDLED / 'narrow_gap.map'}\nlength = 1.2\nwidth = 0.3\nstart_x = 1.5\nstart_y = 4\ngoal_x = 4.15\ngoal_y = 1.0\n")
    out = tmp_path / "out"
    assert main(["plan", str(cfg), "--out", str(out), "--repeat", "1"]) == 1
    assert "stage=search" in capsys.readouterr().err
    rep = json.loads((out / "report.json").read_text())
    assert rep["success"] is False and rep["failed_stage"] == "search"
    assert not (out / "trajectory.csv").exists()


def test_missing_scenario_exit_code(tmp_path):
    assert main(["plan", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2


def test_validate_detects_collision(tmp_path, capsys):
    table = np.array([[0.0, 1.5, 4.0, 0, 0, 0, 0, 0, 0], [0.01, 4.15, 4.0, 0, 0, 0, 0, 0, 0]])
    csv_path = tmp_path / "t.csv"
    csv_path.write_text(format_trajectory_csv(table))
    assert main(["validate", str(BUNDLED / "narrow_gap.map"), str(csv_path), "1.2", "0.3"]) == 1
    verdict = json.loads(capsys.readouterr().out)
    assert verdict == {"poses": 2, "colliding": 1, "collision_free": False, "first_collision_t": 0.01}
    assert main(["validate", str(BUNDLED / "narrow_gap.map"), str(csv_path), "1.2"]) == 2


def test_batch_merges_reports_by_name(tmp_path, capsys):
    for name in ("b_second", "a_first"):
        text = (BUNDLED / "open.cfg").read_text().replace("map = open.map", f"map = {BUNDLED / 'open.map'}")
        (tmp_path / f"{name}.cfg").write_text(text + "repeat = 1\n")
    assert main(["batch", str(tmp_path), "--out", str(tmp_path / "out")]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert [r["name"] for r in summary] == ["a_first", "b_second"]
    assert all(r["success"] for r in summary)
    assert (tmp_path / "out" / "a_first" / "trajectory.csv").is_file()


def test_batch_empty_dir(tmp_path):
    assert main(["batch", str(tmp_path)]) == 2


def test_report_deterministic():
    sc = load_scenario(BUNDLED / "open.cfg")
    a, b = run(sc, repeat=1), run(sc, repeat=1)
    skip = {f for f in vars(a) if f.endswith("_time")}
    da = {k: v for k, v in vars(a).items() if k not in skip}
    db = {k: v for k, v in vars(b).items() if k not in skip}
    assert da == db
