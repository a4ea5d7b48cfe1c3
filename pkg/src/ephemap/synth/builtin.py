"""Built-in synthetic scenarios."""

from .registry import Scenario
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
)

SENSOR_HEIGHT = 2.0

# (name, stall center, sessions the stall is occupied in)
PARKING_STALLS = [
    ("car_n1", (-15.0, 7.5), (1, 2, 3, 4, 5, 6)),
    ("car_n2", (-10.0, 7.5), (1, 2, 3, 4)),
    ("car_n3", (-5.0, 7.5), (2, 3)),
    ("car_n4", (0.0, 7.5), (1, 2)),
    ("car_n5", (5.0, 7.5), (1, 2, 3, 4)),
    ("car_n6", (10.0, 7.5), (3, 4, 5, 6)),
    ("car_n7", (15.0, 7.5), (1, 3, 5)),
    ("car_s1", (-15.0, -7.5), (1, 2, 3, 4, 5, 6)),
    ("car_s2", (-10.0, -7.5), (1, 2, 3, 4)),
    ("car_s3", (-5.0, -7.5), (4, 5, 6)),
    ("car_s4", (0.0, -7.5), (1, 2, 3, 4)),
    ("car_s5", (5.0, -7.5), (2, 4, 6)),
    ("car_s6", (10.0, -7.5), (1, 2)),
    ("car_s7", (15.0, -7.5), (3, 4, 5, 6)),
]
CAR_SIZE = (1.9, 4.4, 1.5)
NEW_WALL = "new_wall"
PARKING_SESSIONS = 6
# Fixed lot structure reaches this far below the deck.
DECK_DEPTH = 10.0
PILLARS_NORTH = (-15.5, -6.0, 3.0, 12.5)
PILLARS_SOUTH = (-12.0, -2.5, 7.0, 16.0)


def _box(name: str, center, size, cls: PrimitiveClass = PrimitiveClass.STATIC, present: bool = True) -> Primitive:
    return Primitive(name, tuple(float(c) for c in center), tuple(float(s) for s in size), cls=cls, present=present)


def _structure(name: str, x: float, y: float, footprint: tuple[float, float], top: float) -> Primitive:
    """Static box from ``top`` down to DECK_DEPTH below the deck."""
    return _box(name, (x, y, (top - DECK_DEPTH) / 2), (footprint[0], footprint[1], top + DECK_DEPTH))


def _car_edits(name: str, sessions: tuple[int, ...]) -> list[SceneEdit]:
    edits = []
    for t in range(2, PARKING_SESSIONS + 1):
        was, now = (t - 1) in sessions, t in sessions
        if was != now:
            edits.append(SceneEdit(t, "add" if now else "remove", name))
    return edits


def parking_lot_scenario() -> SceneSpec:
    """
    Six-session parking lot.

    A 40 x 30 m walled deck with two rows of stalls along a central lane.
    Cars occupy different stalls from session to session, a partition
    appears at the east end at session 3 and stays, and two pedestrians
    cross the lane in a quarter of each session's scans.

    The deck has no ground plane; walls, pillars and a kiosk reach
    DECK_DEPTH below it, so rays past the cars and pedestrians still return.
    Pillar spacing, the kiosk and the wall heights differ between the two
    ends so no view repeats after a half turn.

    Config overrides:
        sigma_f 0.25: rays passing a car edge at lane distance must not
            lower the edge points.
        endpoint_margin 1.0: rays meeting the deep walls at a glancing angle
            keep their free samples off the wall surface.
        nn_radius 0.5: a parked car seen again from a jittered path matches
            its map points at the ~0.3 m ring spacing of 20 m returns.
        density_saturation 5: every point of a car face that leaves is
            deleted with full objectness.
        compact_session False: cleaning is scored against raw returns.
        loop_max_radius 40.0: descriptors span the sensor range.
    """
    structure = [
        _structure("wall_west", -20.15, 0.0, (0.3, 34.0), 5.0),
        _structure("wall_east", 20.15, 0.0, (0.3, 34.0), 3.0),
        _structure("wall_south", 0.0, -15.15, (40.6, 0.3), 4.0),
        _structure("wall_north", 0.0, 15.15, (40.6, 0.3), 4.0),
        _structure("kiosk", -17.5, -2.0, (2.0, 2.0), 2.5),
    ]
    structure += [_structure(f"pillar_n{i}", x, 11.5, (0.6, 0.6), 4.0) for i, x in enumerate(PILLARS_NORTH)]
    structure += [_structure(f"pillar_s{i}", x, -11.5, (0.6, 0.6), 4.0) for i, x in enumerate(PILLARS_SOUTH)]
    new_wall = _box(NEW_WALL, (17.35, 0.0, 1.5), (0.3, 6.0, 3.0), present=False)

    cars = []
    edits = [SceneEdit(3, "add", NEW_WALL)]
    for name, (x, y), sessions in PARKING_STALLS:
        cars.append(
            _box(name, (x, y, CAR_SIZE[2] / 2), CAR_SIZE, cls=PrimitiveClass.TRANSIENT, present=1 in sessions)
        )
        edits.extend(_car_edits(name, sessions))

    pedestrians = (
        Actor("pedestrian_a", (0.5, 0.5, 1.7), (-6.0, 2.5, 0.85), velocity=(1.6, 0.0, 0.0), active_scans=(1, 2, 3)),
        Actor("pedestrian_b", (0.5, 0.5, 1.7), (10.0, -3.0, 0.85), velocity=(-1.6, 0.0, 0.0), active_scans=(6, 7, 8)),
    )

    return SceneSpec(
        name="parking-lot",
        description="Six sessions of a parking deck with stall-hopping cars, a new partition and pedestrians",
        primitives=tuple(structure + [new_wall] + cars),
        actors=pedestrians,
        edits=tuple(edits),
        trajectory=Trajectory(
            start=(-13.0, 0.0, SENSOR_HEIGHT),
            end=(13.0, 0.0, SENSOR_HEIGHT),
            scans=12,
            period=0.5,
            jitter=0.3,
            yaw_jitter=2.0,
        ),
        sensor=SensorModel(rings=32, azimuths=360, max_range=40.0, noise=0.01),
        sessions=PARKING_SESSIONS,
        seed=7,
        bounds=((-20.0, -15.0, 0.0), (20.0, 15.0, 4.0)),
        config={
            "sigma_f": 0.25,
            "endpoint_margin": 1.0,
            "nn_radius": 0.5,
            "density_saturation": 5,
            "compact_session": False,
            "loop_max_radius": 40.0,
        },
    )


CORRIDOR_PILLARS_NORTH = (-31.0, -26.5, -20.0, -16.0, -9.5, -5.0, 1.0, 4.5, 11.0, 15.5, 22.0, 26.0, 32.0)
CORRIDOR_PILLARS_SOUTH = (-29.0, -23.0, -18.5, -12.0, -7.0, -1.5, 3.0, 8.5, 13.0, 19.5, 24.0, 29.5)


def drift_corridor_scenario() -> SceneSpec:
    """Single-session corridor traversal with 1 cm of odometry drift per scan."""
    structure = [
        Primitive("floor", (0.0, 0.0, 0.0), (72.6, 6.6, 0.0), shape=Shape.PLANE),
        _box("wall_north", (0, 3.15, 1.5), (72.6, 0.3, 3)),
        _box("wall_south", (0, -3.15, 1.5), (72.6, 0.3, 3)),
        _box("wall_west", (-36.15, 0, 1.5), (0.3, 6.6, 3)),
        _box("wall_east", (36.15, 0, 1.5), (0.3, 6.6, 3)),
        _box("crate_0", (-12.0, 1.8, 0.5), (1.0, 0.8, 1.0)),
        _box("crate_1", (7.0, -1.9, 0.6), (1.4, 0.6, 1.2)),
        _box("crate_2", (24.0, 1.7, 0.4), (0.8, 1.0, 0.8)),
    ]
    structure += [_box(f"pillar_n{i}", (x, 2.8, 1.5), (0.4, 0.4, 3)) for i, x in enumerate(CORRIDOR_PILLARS_NORTH)]
    structure += [_box(f"pillar_s{i}", (x, -2.8, 1.5), (0.4, 0.4, 3)) for i, x in enumerate(CORRIDOR_PILLARS_SOUTH)]
    return SceneSpec(
        name="drift-corridor",
        description="Corridor with irregular pillars, 60 scans and injected odometry drift",
        primitives=tuple(structure),
        trajectory=Trajectory(start=(-30.0, 0.0, 1.5), end=(29.0, 0.0, 1.5), scans=60, period=0.1),
        sensor=SensorModel(rings=16, azimuths=360, max_range=30.0, noise=0.01),
        drift=DriftModel(translation=(0.008, 0.006, 0.0)),
        sessions=1,
        seed=11,
        bounds=((-36.0, -3.0, 0.0), (36.0, 3.0, 3.0)),
        config={"max_range": 40.0, "loop_max_radius": 30.0},
    )


BUILTIN_SCENARIOS = [
    Scenario(
        name="parking-lot",
        factory=parking_lot_scenario,
        description="Six-session lot: stall-hopping cars, a wall added at session 3, pedestrians",
        aliases=["lot", "parking"],
    ),
    Scenario(
        name="drift-corridor",
        factory=drift_corridor_scenario,
        description="One corridor session with 0.01 m/scan drift for alignment checks",
        aliases=["corridor", "drift"],
    ),
]
