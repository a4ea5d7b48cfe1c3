"""Reading and writing sessions, map archives, deltas and auxiliary files."""

import os
import shutil
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

try:
    import tomllib
except ImportError:
    import tomli as tomllib

import numpy as np
import tomli_w

from ..errors import FormatError
from ..model import EPS_INIT, EPS_MAX, EPS_MIN, AttributedPointCloud, Pose, Scan, Session
from ..spatial import CoverageGrid
from ..update import DeltaMap, Heatmap, PointCategory
from .formats import ARCHIVE_MAGIC, CloudFormat, detect_format, format_from_extension

ARCHIVE_VERSION = 1
POSES_FILE = "poses.txt"
META_FILE = "meta.txt"
SCANS_DIR = "scans"
LABELS_DIR = "labels"
COVERAGE_FILE = "coverage.txt"
ANCHORS_DIR = "anchors"

# SemanticKITTI codes written for synthetic ground truth
LABEL_STATIC = 50
LABEL_TRANSIENT = 10
LABEL_DYNAMIC = 254
DYNAMIC_LABELS = range(252, 260)

_POINT_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("eps_l", "<f4"), ("eps_g", "<f4")])
_HEADER = struct.Struct("<8sIQ16sI")


# --- atomic output ---------------------------------------------------------


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write a file through a temporary sibling and an atomic rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _swap_directory(tmp: Path, path: Path) -> None:
    old = None
    if path.exists():
        old = path.with_name(f".{path.name}.old")
        shutil.rmtree(old, ignore_errors=True)
        os.replace(path, old)
    os.replace(tmp, path)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


class OutputStage:
    """Files and directories written under temporary names, renamed into place on commit."""

    def __init__(self) -> None:
        self._files: list[tuple[Path, Path]] = []
        self._dirs: list[tuple[Path, Path]] = []

    def write_bytes(self, path: Path, data: bytes) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        self._files.append((Path(tmp), path))
        with os.fdopen(fd, "wb") as f:
            f.write(data)

    def write_text(self, path: Path, text: str) -> None:
        self.write_bytes(path, text.encode("utf-8"))

    def directory(self, path: Path) -> Path:
        """An empty temporary directory that replaces ``path`` on commit."""
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
        self._dirs.append((tmp, path))
        return tmp

    def commit(self) -> None:
        """Directories first, then files in the order they were staged."""
        for tmp, path in self._dirs:
            _swap_directory(tmp, path)
        for tmp, path in self._files:
            os.replace(tmp, path)
        self._dirs, self._files = [], []

    def discard(self) -> None:
        for tmp, _ in self._dirs:
            shutil.rmtree(tmp, ignore_errors=True)
        for tmp, _ in self._files:
            tmp.unlink(missing_ok=True)
        self._dirs, self._files = [], []


@contextmanager
def staged_outputs() -> Iterator[OutputStage]:
    """
    Stage several outputs and publish them together.

    Nothing at the final paths changes unless the block completes.
    """
    stage = OutputStage()
    try:
        yield stage
    except BaseException:
        stage.discard()
        raise
    stage.commit()


def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


# --- poses and scans -------------------------------------------------------


def read_poses(path: Path) -> list[Pose]:
    """
    Read a pose file: one row-major 3x4 transform (12 reals) per line.

    Raises:
        FormatError: Naming the first malformed line
    """
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FormatError(f"cannot read pose file: {e}", path) from e
    poses = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 12:
            raise FormatError(f"expected 12 values, found {len(parts)}", path, lineno)
        try:
            values = np.array([float(p) for p in parts])
        except ValueError as e:
            raise FormatError(f"non-numeric value: {e}", path, lineno) from e
        pose = Pose.from_matrix(values.reshape(3, 4))
        if not pose.is_valid(tol=1e-6):
            raise FormatError("rotation is not orthonormal within 1e-6", path, lineno)
        poses.append(pose)
    return poses


def write_poses(poses: list[Pose], path: Path) -> None:
    lines = [" ".join(_fmt(v) for v in p.as_matrix()[:3].reshape(-1)) for p in poses]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_kitti_bin(path: Path) -> np.ndarray:
    """
    Read a scan of little-endian float32 (x, y, z, intensity) quadruplets.

    Returns:
        (N, 3) float64 points; intensity is dropped
    """
    data = path.read_bytes()
    if len(data) % 16:
        raise FormatError(f"size {len(data)} is not a multiple of 16 bytes", path)
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4)[:, :3].astype(np.float64)


def write_kitti_bin(points: np.ndarray, path: Path) -> None:
    quad = np.zeros((len(points), 4), dtype="<f4")
    quad[:, :3] = points
    atomic_write_bytes(path, quad.tobytes())


def read_labels(path: Path) -> np.ndarray:
    """Read a SemanticKITTI ``.label`` file (uint32 per point)."""
    data = path.read_bytes()
    if len(data) % 4:
        raise FormatError(f"size {len(data)} is not a multiple of 4 bytes", path)
    return np.frombuffer(data, dtype="<u4").copy()


def write_labels(labels: np.ndarray, path: Path) -> None:
    atomic_write_bytes(path, np.asarray(labels, dtype="<u4").tobytes())


def is_dynamic_label(labels: np.ndarray) -> np.ndarray:
    """True for SemanticKITTI moving classes; the upper 16 bits (instance id) are ignored."""
    semantic = np.asarray(labels, dtype=np.uint32) & 0xFFFF
    return (semantic >= DYNAMIC_LABELS.start) & (semantic < DYNAMIC_LABELS.stop)


@dataclass(frozen=True)
class SessionLayout:
    """Paths of a session directory."""

    root: Path

    @property
    def poses(self) -> Path:
        return self.root / POSES_FILE

    @property
    def meta(self) -> Path:
        return self.root / META_FILE

    @property
    def scans_dir(self) -> Path:
        return self.root / SCANS_DIR

    @property
    def labels_dir(self) -> Path:
        return self.root / LABELS_DIR

    def scan_path(self, index: int) -> Path:
        return self.scans_dir / f"{index:06d}.bin"

    def label_path(self, index: int) -> Path:
        return self.labels_dir / f"{index:06d}.label"

    def scan_files(self) -> list[Path]:
        return sorted(self.scans_dir.glob("*.bin"))


def read_session(directory: Path) -> Session:
    """
    Load a session directory (poses.txt, scans/, optional meta.txt).

    Raises:
        FormatError: If files are missing, malformed or inconsistent
    """
    layout = SessionLayout(Path(directory))
    if not layout.root.is_dir():
        raise FormatError("session directory not found", layout.root)
    if not layout.poses.exists():
        raise FormatError("missing poses.txt", layout.root)
    poses = read_poses(layout.poses)
    files = layout.scan_files()
    if len(files) != len(poses):
        raise FormatError(f"{len(files)} scan files but {len(poses)} poses", layout.root)

    meta: dict = {}
    if layout.meta.exists():
        try:
            meta = tomllib.loads(layout.meta.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise FormatError(f"invalid meta file: {e}", layout.meta) from e
    stamps = meta.get("timestamps", list(range(len(files))))
    if len(stamps) != len(files):
        raise FormatError(f"{len(stamps)} timestamps for {len(files)} scans", layout.meta)

    scans = tuple(Scan(read_kitti_bin(f), timestamp=float(t)) for f, t in zip(files, stamps))
    return Session(
        scans,
        tuple(poses),
        frame_id=str(meta.get("frame_id", "local")),
        session_id=str(meta.get("session_id", layout.root.name)),
        sensor_id=str(meta.get("sensor_id", "lidar")),
    )


def write_session(session: Session, directory: Path, labels: Optional[list[np.ndarray]] = None) -> SessionLayout:
    """Write a session (and optional per-scan labels) in the session layout."""
    layout = SessionLayout(Path(directory))
    layout.scans_dir.mkdir(parents=True, exist_ok=True)
    for i, scan in enumerate(session.scans):
        write_kitti_bin(scan.points, layout.scan_path(i))
    if labels is not None:
        layout.labels_dir.mkdir(parents=True, exist_ok=True)
        for i, lab in enumerate(labels):
            write_labels(lab, layout.label_path(i))
    write_poses(list(session.poses), layout.poses)
    meta = {
        "session_id": session.session_id,
        "sensor_id": session.sensor_id,
        "frame_id": session.frame_id,
        "timestamps": [float(t) for t in session.timestamps],
    }
    atomic_write_text(layout.meta, tomli_w.dumps(meta))
    return layout


def read_session_labels(directory: Path, session: Session) -> list[np.ndarray]:
    """
    Per-scan label arrays of a session directory.

    Raises:
        FormatError: If a label file is missing or its length differs from the scan
    """
    layout = SessionLayout(Path(directory))
    out = []
    for i, scan in enumerate(session.scans):
        path = layout.label_path(i)
        if not path.exists():
            raise FormatError("missing label file", path)
        labels = read_labels(path)
        if len(labels) != len(scan):
            raise FormatError(f"{len(labels)} labels for {len(scan)} points", path)
        out.append(labels)
    return out


# --- map archive -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MapArchive:
    """A lifelong map with its provenance."""

    cloud: AttributedPointCloud
    config_hash: str
    lineage: tuple[str, ...] = ()
    version: int = ARCHIVE_VERSION

    def with_session(self, cloud: AttributedPointCloud, session_id: str, config_hash: str) -> "MapArchive":
        return MapArchive(cloud, config_hash, self.lineage + (session_id,))


def encode_archive(archive: MapArchive) -> bytes:
    """Serialise an archive: header, lineage, then float32 point records."""
    digest = archive.config_hash.encode("ascii")[:16].ljust(16, b"\0")
    parts = [_HEADER.pack(ARCHIVE_MAGIC, archive.version, len(archive.cloud), digest, len(archive.lineage))]
    for sid in archive.lineage:
        raw = sid.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    records = np.empty(len(archive.cloud), dtype=_POINT_DTYPE)
    cloud = archive.cloud
    records["x"], records["y"], records["z"] = cloud.positions.T
    records["eps_l"] = cloud.eps_l
    records["eps_g"] = cloud.eps_g
    parts.append(records.tobytes())
    return b"".join(parts)


def decode_archive(data: bytes, path: Union[Path, str, None] = None) -> MapArchive:
    """
    Parse archive bytes.

    Raises:
        FormatError: On a bad magic or version, a count that does not match
            the payload, or ephemerality outside the clamp range
    """
    if len(data) < _HEADER.size:
        raise FormatError("truncated archive header", path)
    magic, version, count, digest, n_lineage = _HEADER.unpack_from(data, 0)
    if magic != ARCHIVE_MAGIC:
        raise FormatError("not a map archive (bad magic)", path)
    if version != ARCHIVE_VERSION:
        raise FormatError(f"unsupported archive version {version}", path)
    offset = _HEADER.size
    lineage = []
    for _ in range(n_lineage):
        if offset + 2 > len(data):
            raise FormatError("truncated lineage", path)
        (size,) = struct.unpack_from("<H", data, offset)
        offset += 2
        lineage.append(data[offset : offset + size].decode("utf-8"))
        offset += size
    payload = data[offset:]
    if len(payload) != count * _POINT_DTYPE.itemsize:
        raise FormatError(
            f"header declares {count} points but payload holds {len(payload) / _POINT_DTYPE.itemsize:g}", path
        )
    records = np.frombuffer(payload, dtype=_POINT_DTYPE)
    positions = np.stack([records["x"], records["y"], records["z"]], axis=1).astype(np.float64)
    eps_l = records["eps_l"].astype(np.float64)
    eps_g = records["eps_g"].astype(np.float64)
    lo, hi = np.float32(EPS_MIN), np.float32(EPS_MAX)
    for name, eps in (("eps_l", eps_l), ("eps_g", eps_g)):
        if len(eps) and (eps.min() < lo or eps.max() > hi):
            raise FormatError(f"{name} outside [{EPS_MIN}, {EPS_MAX}]", path)
    # float32 bounds widen to just outside the float64 clamp range.
    eps_l = np.clip(eps_l, EPS_MIN, EPS_MAX)
    eps_g = np.clip(eps_g, EPS_MIN, EPS_MAX)
    cloud = AttributedPointCloud(positions, eps_l, eps_g, frame_id="map")
    return MapArchive(cloud, digest.rstrip(b"\0").decode("ascii"), tuple(lineage), version)


def read_archive(path: Path) -> MapArchive:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read archive: {e}", path) from e
    return decode_archive(data, path)


def write_archive(archive: MapArchive, path: Path) -> None:
    atomic_write_bytes(path, encode_archive(archive))


def _stored_eps(eps: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(eps).astype("<f4").astype(np.float64), EPS_MIN, EPS_MAX)


def quantize(cloud: AttributedPointCloud) -> AttributedPointCloud:
    """The cloud exactly as it reads back from an archive (float32 fields)."""
    return AttributedPointCloud(
        cloud.positions.astype("<f4").astype(np.float64),
        _stored_eps(cloud.eps_l),
        _stored_eps(cloud.eps_g),
        cloud.frame_id,
    )


# --- archive sidecar -------------------------------------------------------


def sidecar_dir(archive_path: Path) -> Path:
    return archive_path.with_name(archive_path.name + ".d")


def write_coverage(grid: CoverageGrid, path: Path) -> None:
    """Coverage as ``# cell=<size>`` followed by one ``i j k`` line per cell."""
    lines = [f"# cell={_fmt(grid.cell)}"]
    lines += [f"{i} {j} {k}" for i, j, k in grid.cells()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_coverage(path: Path) -> CoverageGrid:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FormatError(f"cannot read coverage file: {e}", path) from e
    if not lines or not lines[0].startswith("# cell="):
        raise FormatError("missing '# cell=' header", path, 1)
    cell = float(lines[0].split("=", 1)[1])
    cells = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            i, j, k = (int(v) for v in line.split())
        except ValueError as e:
            raise FormatError("expected three integers", path, lineno) from e
        cells.append((i, j, k))
    return CoverageGrid.from_cells(np.array(cells, dtype=np.int64).reshape(-1, 3), cell)


def write_anchors(session: Session, directory: Path, stride: int = 1) -> None:
    """Keep every ``stride``-th scan of a map-frame session for loop detection."""
    keep = list(range(0, len(session), max(stride, 1)))
    subset = Session(
        tuple(session.scans[i] for i in keep),
        tuple(session.poses[i] for i in keep),
        frame_id="map",
        session_id=session.session_id,
        sensor_id=session.sensor_id,
    )
    write_session(subset, directory)


def read_anchors(directory: Path) -> list[tuple[Scan, Pose]]:
    session = read_session(directory)
    return list(zip(session.scans, session.poses))


# --- point-cloud exports ---------------------------------------------------


def write_ply(cloud: AttributedPointCloud, path: Path) -> None:
    """ASCII PLY with x, y, z, eps_l, eps_g vertex properties."""
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property float eps_l",
        "property float eps_g",
        "end_header",
    ]
    rows = np.column_stack([cloud.positions, cloud.eps_l, cloud.eps_g])
    body = [" ".join(f"{v:.9g}" for v in row) for row in rows]
    atomic_write_text(path, "\n".join(header + body) + "\n")


def read_ply(path: Path) -> AttributedPointCloud:
    """Read an ASCII PLY; eps fields default to 0.5 when absent."""
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' signature", path, 1)
    props: list[str] = []
    count = None
    end = None
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if parts[:1] == ["format"] and parts[1:2] != ["ascii"]:
            raise FormatError("only ASCII PLY is supported", path, lineno)
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts[:1] == ["property"] and count is not None:
            props.append(parts[-1])
        elif parts[:1] == ["end_header"]:
            end = lineno
            break
    if end is None or count is None:
        raise FormatError("incomplete PLY header", path)
    rows = []
    for lineno, line in enumerate(lines[end : end + count], start=end + 1):
        try:
            rows.append([float(v) for v in line.split()[: len(props)]])
        except ValueError as e:
            raise FormatError("non-numeric vertex value", path, lineno) from e
    if len(rows) != count:
        raise FormatError(f"header declares {count} vertices, found {len(rows)}", path)
    data = np.array(rows, dtype=np.float64).reshape(-1, len(props))
    col = {name: data[:, i] for i, name in enumerate(props)}
    positions = np.stack([col["x"], col["y"], col["z"]], axis=1)
    eps_l = col.get("eps_l", np.full(count, EPS_INIT))
    eps_g = col.get("eps_g", np.full(count, EPS_INIT))
    return AttributedPointCloud(positions, eps_l, eps_g)


def write_xyz(cloud: AttributedPointCloud, path: Path) -> None:
    rows = np.column_stack([cloud.positions, cloud.eps_l, cloud.eps_g])
    atomic_write_text(path, "".join(" ".join(_fmt(v) for v in row) + "\n" for row in rows))


def read_xyz(path: Path) -> AttributedPointCloud:
    """Whitespace text with 3 (x y z) or 5 (x y z eps_l eps_g) columns."""
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (3, 5):
            raise FormatError(f"expected 3 or 5 columns, found {len(parts)}", path, lineno)
        try:
            rows.append([float(v) for v in parts] + ([EPS_INIT, EPS_INIT] if len(parts) == 3 else []))
        except ValueError as e:
            raise FormatError("non-numeric value", path, lineno) from e
    data = np.array(rows, dtype=np.float64).reshape(-1, 5)
    return AttributedPointCloud(data[:, :3], data[:, 3], data[:, 4])


def read_cloud(path: Path) -> AttributedPointCloud:
    """
    Read any supported cloud file, detecting the format from content or extension.

    Raises:
        FormatError: If the file is missing or its format is unknown
    """
    if not path.exists():
        raise FormatError("file not found", path)
    with open(path, "rb") as f:
        fmt = detect_format(f.read(16))
    if fmt is None:
        fmt = format_from_extension(path.suffix)
    if fmt is CloudFormat.ARCHIVE:
        return read_archive(path).cloud
    if fmt is CloudFormat.PLY:
        return read_ply(path)
    if fmt is CloudFormat.XYZ:
        return read_xyz(path)
    if fmt is CloudFormat.KITTI_BIN:
        return AttributedPointCloud.from_points(read_kitti_bin(path))
    raise FormatError("unknown point-cloud format", path)


def write_cloud(cloud: AttributedPointCloud, path: Path, fmt: Optional[CloudFormat] = None, config_hash: str = "") -> None:
    """Write a cloud in the format implied by ``fmt`` or the path extension (archive by default)."""
    fmt = fmt or format_from_extension(path.suffix) or CloudFormat.ARCHIVE
    if fmt is CloudFormat.PLY:
        write_ply(cloud, path)
    elif fmt is CloudFormat.XYZ:
        write_xyz(cloud, path)
    elif fmt is CloudFormat.KITTI_BIN:
        write_kitti_bin(cloud.positions, path)
    else:
        write_archive(MapArchive(cloud, config_hash), path)


# --- delta maps and heatmaps -----------------------------------------------


def format_delta(delta: DeltaMap) -> str:
    """Delta text: two header comments, then ``x y z category eps_before eps_after gamma`` rows."""
    lines = [
        f"# session_id={delta.session_id}",
        f"# config_hash={delta.config_hash}",
        "# x y z category eps_before eps_after gamma",
    ]
    for rec in delta.records:
        x, y, z = rec.position
        lines.append(
            f"{_fmt(x)} {_fmt(y)} {_fmt(z)} {rec.category.value} "
            f"{_fmt(rec.eps_g_before)} {_fmt(rec.eps_g_after)} {_fmt(rec.gamma)}"
        )
    return "\n".join(lines) + "\n"


def write_delta(delta: DeltaMap, path: Path) -> None:
    atomic_write_text(path, format_delta(delta))


def read_delta(path: Path) -> DeltaMap:
    """
    Parse a delta file written by write_delta.

    Raises:
        FormatError: Naming the first malformed line
    """
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FormatError(f"cannot read delta file: {e}", path) from e
    header: dict[str, str] = {}
    rows = []
    cats = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                header[key.strip()] = value.strip()
            continue
        parts = line.split()
        if len(parts) != 7:
            raise FormatError(f"expected 7 columns, found {len(parts)}", path, lineno)
        try:
            cats.append(PointCategory(parts[3]).code)
            rows.append([float(parts[i]) for i in (0, 1, 2, 4, 5, 6)])
        except ValueError as e:
            raise FormatError(f"bad delta record: {e}", path, lineno) from e
    if "session_id" not in header:
        raise FormatError("missing '# session_id=' header", path)
    data = np.array(rows, dtype=np.float64).reshape(-1, 6)
    return DeltaMap(
        session_id=header["session_id"],
        config_hash=header.get("config_hash", ""),
        positions=data[:, :3],
        categories=np.array(cats, dtype=np.int8),
        eps_before=data[:, 3],
        eps_after=data[:, 4],
        gamma=data[:, 5],
    )


def write_heatmap(heatmap: Heatmap, path: Path) -> None:
    """Heatmap text: ``# cell=<size>`` then ``i j k count value`` per cell."""
    lines = [f"# cell={_fmt(heatmap.cell)}"]
    for (i, j, k), n, v in zip(heatmap.cells, heatmap.counts, heatmap.values):
        lines.append(f"{i} {j} {k} {int(n)} {_fmt(v)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
