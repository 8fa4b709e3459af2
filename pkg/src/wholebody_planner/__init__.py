"""Whole-body motion planning for rectangular bi-copters in 2-D occupancy maps."""

from .geometry import ConvexPolygon, Pose2, RobotShape
from .gridmap import OccupancyGrid, load_map
from .minco import MincoTrajectory, construct
from .search import KinodynamicSearch, SearchLimits, SearchState, search

__version__ = "0.1.0"

__all__ = [
    "ConvexPolygon",
    "KinodynamicSearch",
    "MincoTrajectory",
    "OccupancyGrid",
    "Pose2",
    "RobotShape",
    "SearchLimits",
    "SearchState",
    "construct",
    "load_map",
    "search",
]
