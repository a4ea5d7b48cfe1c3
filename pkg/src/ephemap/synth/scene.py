"""Scene descriptions for synthetic multi-session LiDAR worlds."""

import math
import re
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ImportError:
    import tomli as tomllib

import numpy as np
import tomli_w

from ..errors import SceneError
from ..model import Pose

Vec3 = tuple[float, float, float]


class PrimitiveClass(str, Enum):
    """Ground-truth class carried by every point a primitive returns."""

    STATIC = "static"
    DYNAMIC = "dynamic"
    TRANSIENT = "transient"

    @property
    def code(self) -> int:
        return list(PrimitiveClass).index(self)


class Shape(str, Enum):
    BOX = "box"
    PLANE = "plane"


@dataclass(frozen=True)
class Primitive:
    """An oriented box, or a plane given as a box with one zero extent."""

    name: str
    center: Vec3
    size: Vec3
    shape: Shape = Shape.BOX
    yaw: float = 0.0
    cls: PrimitiveClass = PrimitiveClass.STATIC
    present: bool = True

    def half_extents(self) -> np.ndarray:
        return np.asarray(self.size, dtype=np.float64) / 2.0

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Mask of points inside the box grown by ``margin`` on every side."""
        local = self.to_local(points)
        return np.all(np.abs(local) <= self.half_extents() + margin, axis=1)

    def rotate_to_local(self, vectors: np.ndarray) -> np.ndarray:
        """Express world-frame vectors in the box frame (yaw about +z)."""
        c, s = math.cos(math.radians(self.yaw)), math.sin(math.radians(self.yaw))
        world_from_box = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return np.asarray(vectors, dtype=np.float64).reshape(-1, 3) @ world_from_box

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return self.rotate_to_local(np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(self.center))


@dataclass(frozen=True)
class Actor:
    """A box moving at constant velocity during the scans it is active in."""

    name: str
    size: Vec3
    start: Vec3
    velocity: Vec3 = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    active_scans: Optional[tuple[int, ...]] = None
    sessions: Optional[tuple[int, ...]] = None

    def is_active(self, session: int, scan: int) -> bool:
        if self.sessions is not None and session not in self.sessions:
            return False
        return self.active_scans is None or scan in self.active_scans

    def at(self, time: float) -> Primitive:
        center = tuple(float(s + v * time) for s, v in zip(self.start, self.velocity))
        return Primitive(self.name, center, self.size, yaw=self.yaw, cls=PrimitiveClass.DYNAMIC)


@dataclass(frozen=True)
class SceneEdit:
    """Adds or removes a named primitive from a session onward."""

    session: int
    action: str
    primitive: str


@dataclass(frozen=True)
class SensorModel:
    """Ring/azimuth ray grid with Gaussian range noise."""

    rings: int = 32
    azimuths: int = 360
    min_elevation: float = -15.0
    max_elevation: float = 15.0
    max_range: float = 80.0
    noise: float = 0.01

    def directions(self) -> np.ndarray:
        """Unit ray directions in sensor frame, ring-major."""
        elev = np.radians(np.linspace(self.min_elevation, self.max_elevation, self.rings))
        azim = np.radians(np.arange(self.azimuths) * 360.0 / self.azimuths)
        el, az = np.meshgrid(elev, azim, indexing="ij")
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1).reshape(-1, 3)


@dataclass(frozen=True)
class Trajectory:
    """Straight sensor path; each session starts from a jittered copy."""

    start: Vec3
    end: Vec3
    scans: int = 12
    period: float = 0.5
    heading: Optional[float] = None
    jitter: float = 0.0
    yaw_jitter: float = 0.0

    def poses(self, session_offset: Optional[np.ndarray] = None) -> list[Pose]:
        """World-frame sensor poses; offset is (dx, dy, dyaw_degrees)."""
        start = np.asarray(self.start, dtype=np.float64)
        end = np.asarray(self.end, dtype=np.float64)
        dx, dy, dyaw = (0.0, 0.0, 0.0) if session_offset is None else session_offset
        heading = self.heading
        if heading is None:
            heading = math.degrees(math.atan2(end[1] - start[1], end[0] - start[0]))
        yaw = math.radians(heading + dyaw)
        out = []
        for i in range(self.scans):
            frac = i / (self.scans - 1) if self.scans > 1 else 0.0
            p = start + (end - start) * frac
            out.append(Pose.from_xyz_rpy(p[0] + dx, p[1] + dy, p[2], yaw=yaw))
        return out


@dataclass(frozen=True)
class DriftModel:
    """Per-scan odometry error accumulated over a session."""

    translation: Vec3 = (0.0, 0.0, 0.0)
    yaw: float = 0.0

    @property
    def is_zero(self) -> bool:
        return not any(self.translation) and self.yaw == 0.0

    def at(self, index: int) -> Pose:
        return Pose.from_xyz_rpy(
            *(index * np.asarray(self.translation, dtype=np.float64)), yaw=math.radians(index * self.yaw)
        )


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to render a labeled multi-session world."""

    name: str
    primitives: tuple[Primitive, ...]
    trajectory: Trajectory
    sensor: SensorModel = field(default_factory=SensorModel)
    actors: tuple[Actor, ...] = ()
    edits: tuple[SceneEdit, ...] = ()
    drift: DriftModel = field(default_factory=DriftModel)
    sessions: int = 1
    seed: int = 0
    bounds: Optional[tuple[Vec3, Vec3]] = None
    config: dict[str, Any] = field(default_factory=dict)
    description: str = ""

    def with_seed(self, seed: int) -> "SceneSpec":
        return replace(self, seed=seed)

    def validate(self) -> None:
        """
        Check names, edits and session indices.

        Raises:
            SceneError: On the first inconsistency found
        """
        names = [p.name for p in self.primitives] + [a.name for a in self.actors]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SceneError(f"duplicate primitive names: {', '.join(sorted(dupes))}")
        if self.sessions < 1:
            raise SceneError("scene needs at least one session")
        if self.trajectory.scans < 1:
            raise SceneError("trajectory needs at least one scan")
        known = {p.name for p in self.primitives}
        for edit in self.edits:
            if edit.action not in ("add", "remove"):
                raise SceneError(f"unknown edit action '{edit.action}'")
            if edit.primitive not in known:
                raise SceneError(f"edit refers to unknown primitive '{edit.primitive}'")
            if not 1 <= edit.session <= self.sessions:
                raise SceneError(f"edit session {edit.session} outside 1..{self.sessions}")

    def primitives_for(self, session: int) -> list[Primitive]:
        """Static and transient primitives present in a session (1-based)."""
        present = {p.name: p.present for p in self.primitives}
        for edit in sorted(self.edits, key=lambda e: e.session):
            if edit.session <= session:
                present[edit.primitive] = edit.action == "add"
        return [p for p in self.primitives if present[p.name]]


def _vec3(value: Any, what: str) -> Vec3:
    try:
        x, y, z = (float(v) for v in value)
    except (TypeError, ValueError) as e:
        raise SceneError(f"{what} must be a list of three numbers") from e
    return (x, y, z)


def _block_line(text: str, table: str, index: int) -> Optional[int]:
    """Line number of the index-th ``[[table]]`` header, if present."""
    pattern = re.compile(rf"^\s*\[\[\s*{re.escape(table)}\s*\]\]")
    seen = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            if seen == index:
                return lineno
            seen += 1
    return None


def _scene_error(message: str, source: str, line: Optional[int]) -> SceneError:
    where = source
    if line is not None:
        where += f":{line}"
    return SceneError(f"{where}: {message}")


def _parse_primitive(data: dict[str, Any]) -> Primitive:
    shape = Shape(data.get("shape", "box"))
    size = _vec3(data["size"], "size")
    if shape is Shape.PLANE and min(size) != 0.0:
        raise SceneError("plane needs exactly one zero extent")
    return Primitive(
        name=str(data["name"]),
        center=_vec3(data["center"], "center"),
        size=size,
        shape=shape,
        yaw=float(data.get("yaw", 0.0)),
        cls=PrimitiveClass(data.get("class", "static")),
        present=bool(data.get("present", True)),
    )


def _parse_actor(data: dict[str, Any]) -> Actor:
    active = data.get("active_scans")
    sessions = data.get("sessions")
    return Actor(
        name=str(data["name"]),
        size=_vec3(data["size"], "size"),
        start=_vec3(data["start"], "start"),
        velocity=_vec3(data.get("velocity", (0.0, 0.0, 0.0)), "velocity"),
        yaw=float(data.get("yaw", 0.0)),
        active_scans=None if active is None else tuple(int(i) for i in active),
        sessions=None if sessions is None else tuple(int(i) for i in sessions),
    )


def _parse_edit(data: dict[str, Any]) -> SceneEdit:
    actions = [a for a in ("add", "remove") if a in data]
    if len(actions) != 1:
        raise SceneError("edit needs exactly one of 'add' or 'remove'")
    return SceneEdit(int(data["session"]), actions[0], str(data[actions[0]]))


def parse_scene(text: str, source: str = "<scene>") -> SceneSpec:
    """
    Parse a scene description.

    Args:
        text: TOML text with [[primitive]], [[actor]] and [[edit]] blocks
        source: Name used in error messages

    Returns:
        The validated SceneSpec

    Raises:
        SceneError: With the offending line number when it can be located
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        match = re.search(r"line (\d+)", str(e))
        raise _scene_error(f"parse error: {e}", source, int(match.group(1)) if match else None) from e

    def _blocks(table: str, parser):
        out = []
        for i, item in enumerate(data.get(table, [])):
            try:
                out.append(parser(item))
            except KeyError as e:
                raise _scene_error(f"{table} block missing key {e}", source, _block_line(text, table, i)) from e
            except (SceneError, ValueError) as e:
                raise _scene_error(f"{table} block: {e}", source, _block_line(text, table, i)) from e
        return tuple(out)

    try:
        traj = dict(data["trajectory"])
        trajectory = Trajectory(
            start=_vec3(traj.pop("start"), "trajectory.start"),
            end=_vec3(traj.pop("end"), "trajectory.end"),
            **traj,
        )
        sensor = SensorModel(**data.get("sensor", {}))
        drift_data = dict(data.get("drift", {}))
        if "translation" in drift_data:
            drift_data["translation"] = _vec3(drift_data["translation"], "drift.translation")
        drift = DriftModel(**drift_data)
        bounds = data.get("bounds")
        if bounds is not None:
            bounds = (_vec3(bounds[0], "bounds[0]"), _vec3(bounds[1], "bounds[1]"))
    except KeyError as e:
        raise _scene_error(f"missing required key {e}", source, None) from e
    except TypeError as e:
        raise _scene_error(f"unexpected key: {e}", source, None) from e

    spec = SceneSpec(
        name=str(data.get("name", Path(source).stem)),
        primitives=_blocks("primitive", _parse_primitive),
        actors=_blocks("actor", _parse_actor),
        edits=_blocks("edit", _parse_edit),
        trajectory=trajectory,
        sensor=sensor,
        drift=drift,
        sessions=int(data.get("sessions", 1)),
        seed=int(data.get("seed", 0)),
        bounds=bounds,
        config=dict(data.get("config", {})),
        description=str(data.get("description", "")),
    )
    spec.validate()
    return spec


def load_scene(path: Path) -> SceneSpec:
    """Read and parse a scene file."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise SceneError(f"cannot read scene file {path}: {e}") from e
    return parse_scene(text, source=str(path))


def _clean(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return [_clean(v) for v in value]
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items() if v is not None}
    return value


def dump_scene(spec: SceneSpec) -> str:
    """Serialise a SceneSpec to the scene file dialect."""
    doc: dict[str, Any] = {
        "name": spec.name,
        "description": spec.description,
        "sessions": spec.sessions,
        "seed": spec.seed,
    }
    if spec.bounds is not None:
        doc["bounds"] = _clean(spec.bounds)
    doc["sensor"] = _clean(asdict(spec.sensor))
    doc["trajectory"] = _clean(asdict(spec.trajectory))
    doc["drift"] = _clean(asdict(spec.drift))
    if spec.config:
        doc["config"] = dict(spec.config)
    doc["primitive"] = []
    for p in spec.primitives:
        item = _clean(asdict(p))
        item["class"] = item.pop("cls")
        doc["primitive"].append(item)
    if spec.actors:
        doc["actor"] = [_clean(asdict(a)) for a in spec.actors]
    if spec.edits:
        doc["edit"] = [
            {"session": e.session, e.action: e.primitive} for e in spec.edits
        ]
    return tomli_w.dumps(doc)
