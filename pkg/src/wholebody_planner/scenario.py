"""Scenario files: flat ``key = value`` documents describing one planning run.

Unknown keys are rejected so that typos do not silently fall back to
defaults. Relative map paths resolve against the scenario file's directory.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .geometry import RobotShape
from .gridmap import DEFAULT_RESOLUTION, OccupancyGrid, load_map
from .optimizer import DynamicLimits, PenaltyWeights
from .search import SearchLimits, SearchState

_SECTION = "scenario"


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario document."""


@dataclass
class Scenario:
    name: str = "scenario"
    map: str = ""
    resolution: float = DEFAULT_RESOLUTION  # bitmaps only; ASCII maps carry their own
    origin_x: float = 0.0
    origin_y: float = 0.0
    # robot
    length: float = 1.2
    width: float = 0.6
    edge_samples: int = 5
    # boundary states
    start_x: float = 0.0
    start_y: float = 0.0
    start_psi: float = 0.0
    start_vx: float = 0.0
    start_vy: float = 0.0
    goal_x: float = 0.0
    goal_y: float = 0.0
    goal_psi: float = 0.0
    goal_vx: float = 0.0
    goal_vy: float = 0.0
    # limits
    v_max: float = 2.0
    a_max: float = 2.0
    w_max: float = 1.5
    # search
    tau: float = 0.5
    r: int = 1
    p: int = 1
    lambda_t: float = 1.0
    n_checks: int = 10
    heuristic_weight: float = 5.0
    max_expansions: int = 300_000
    analytic_radius: float = 5.0
    # corridor
    corridor_spacing: float = 0.5
    corridor_step: float = 0.0  # 0 means one grid cell
    corridor_max_expand: float = 2.0
    # optimizer
    rho: float = 1.0
    w_v: float = 1e4
    w_a: float = 1e4
    w_w: float = 1e4
    w_p: float = 1e5
    dT: float = 0.05
    mu: float = 1e-2
    max_iter: int = 2000
    # reporting
    jerk_dt: float = 0.01
    sample_dt: float = 0.01
    footprint_interval: float = 0.5
    repeat: int = 5
    seed: int = 0
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def __post_init__(self):
        for name in ("length", "width", "v_max", "a_max", "w_max", "tau", "dT", "mu", "jerk_dt", "sample_dt"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be positive")
        if self.corridor_spacing <= 0 or self.footprint_interval <= 0:
            raise ScenarioError("corridor_spacing and footprint_interval must be positive")
        if self.repeat < 1:
            raise ScenarioError("repeat must be >= 1")

    @property
    def shape(self) -> RobotShape:
        return RobotShape(max(self.length, self.width), min(self.length, self.width), self.edge_samples)

    @property
    def start(self) -> SearchState:
        return SearchState(self.start_x, self.start_y, self.start_psi, self.start_vx, self.start_vy)

    @property
    def goal(self) -> SearchState:
        return SearchState(self.goal_x, self.goal_y, self.goal_psi, self.goal_vx, self.goal_vy)

    def search_limits(self) -> SearchLimits:
        return SearchLimits(
            v_max=self.v_max,
            a_max=self.a_max,
            w_zmax=self.w_max,
            tau=self.tau,
            r=self.r,
            p=self.p,
            rho=self.rho,
            lambda_t=self.lambda_t,
            n_checks=self.n_checks,
            heuristic_weight=self.heuristic_weight,
            max_expansions=self.max_expansions,
            analytic_radius=self.analytic_radius,
        )

    def dynamic_limits(self) -> DynamicLimits:
        return DynamicLimits(self.v_max, self.a_max, self.w_max)

    def weights(self) -> PenaltyWeights:
        return PenaltyWeights(self.rho, self.w_v, self.w_a, self.w_w, self.w_p, self.dT, self.mu)

    def map_path(self) -> Path:
        p = Path(self.map)
        return p if p.is_absolute() else self.base_dir / p

    def load_grid(self) -> OccupancyGrid:
        if not self.map:
            raise ScenarioError("scenario does not name a map")
        path = self.map_path()
        if not path.exists():
            raise ScenarioError(f"map file not found: {path}")
        return load_map(path, self.resolution, (self.origin_x, self.origin_y))


_TYPES = {f.name: f.type for f in fields(Scenario) if f.name != "base_dir"}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            v = raw.strip().lower()
            # angles may be written as multiples of pi, e.g. "pi/2" or "-0.5pi"
            if "pi" in v:
                num, _, den = v.replace("*", "").partition("/")
                coef = num.replace("pi", "").strip()
                coef = -1.0 if coef == "-" else float(coef) if coef else 1.0
                return coef * math.pi / (float(den) if den else 1.0)
            return float(raw)
    except ValueError:
        raise ScenarioError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw.strip()


def parse_scenario(text: str, base_dir: str | Path = ".", name: str | None = None) -> Scenario:
    """Parse a scenario document. Blank lines and ``#``/``;`` comments are ignored."""
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from None
    values = {}
    for key, raw in cp[_SECTION].items():
        if key not in _TYPES:
            raise ScenarioError(f"unknown scenario key {key!r}")
        values[key] = _convert(key, raw)
    if name is not None and "name" not in values:
        values["name"] = name
    return Scenario(**values, base_dir=Path(base_dir))


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), path.parent, path.stem)


def bundled_dir() -> Path:
    """Directory holding the bundled maps and scenarios."""
    return Path(__file__).parent / "scenarios"
