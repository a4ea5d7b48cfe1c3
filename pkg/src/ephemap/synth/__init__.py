"""Synthetic labeled LiDAR worlds and brute-force oracles."""

from .builtin import BUILTIN_SCENARIOS, NEW_WALL, drift_corridor_scenario, parking_lot_scenario
from .oracle import (
    MAX_ORACLE_POINTS,
    MAX_ORACLE_SAMPLES,
    brute_alignment_metrics,
    brute_cleaning_metrics,
    linear_knn,
    oracle_ephemerality,
)
from .registry import Scenario, ScenarioRegistry, get_registry, resolve_scene
from .render import LabeledSession, cast_rays, render_scan, render_session, session_gt_poses
from .scene import (
    Actor,
    DriftModel,
    Primitive,
    PrimitiveClass,
    SceneEdit,
    SceneSpec,
    SensorModel,
    Shape,
    Trajectory,
    dump_scene,
    load_scene,
    parse_scene,
)

__all__ = [
    "Actor",
    "BUILTIN_SCENARIOS",
    "DriftModel",
    "LabeledSession",
    "MAX_ORACLE_POINTS",
    "MAX_ORACLE_SAMPLES",
    "NEW_WALL",
    "Primitive",
    "PrimitiveClass",
    "Scenario",
    "ScenarioRegistry",
    "SceneEdit",
    "SceneSpec",
    "SensorModel",
    "Shape",
    "Trajectory",
    "brute_alignment_metrics",
    "brute_cleaning_metrics",
    "cast_rays",
    "drift_corridor_scenario",
    "dump_scene",
    "get_registry",
    "linear_knn",
    "load_scene",
    "oracle_ephemerality",
    "parking_lot_scenario",
    "parse_scene",
    "render_scan",
    "render_session",
    "resolve_scene",
    "session_gt_poses",
]
