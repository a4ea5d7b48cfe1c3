"""Core orchestration: the init/update recursion and the file-level commands."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .alignment import AlignedSession, LoopDetector, PolarContextDetector, zipper_align
from .config import PipelineConfig, config_hash, make_config, save_config
from .errors import AlignmentError, FormatError, InputValidationError
from .evaluation import AlignmentMetrics, CleaningMetrics, alignment_metrics, cleaning_metrics
from .model import AttributedPointCloud, Pose, Scan, Session, validate_session
from .removal import RemovalResult, remove_dynamic
from .spatial import CoverageGrid, voxel_downsample
from .synth import LabeledSession, PrimitiveClass, SceneSpec, dump_scene, render_session
from .update import (
    DeltaMap,
    Heatmap,
    UpdateResult,
    export_heatmap,
    extract_static_map,
    merge_and_update,
    replay_delta,
    rollback_delta,
)
from .utils.formats import CloudFormat
from .utils.io import (
    ANCHORS_DIR,
    COVERAGE_FILE,
    LABEL_DYNAMIC,
    LABEL_STATIC,
    LABEL_TRANSIENT,
    MapArchive,
    OutputStage,
    atomic_write_text,
    encode_archive,
    format_delta,
    is_dynamic_label,
    quantize,
    read_anchors,
    read_archive,
    read_cloud,
    read_coverage,
    read_delta,
    read_session,
    read_session_labels,
    sidecar_dir,
    staged_outputs,
    write_anchors,
    write_archive,
    write_cloud,
    write_coverage,
    write_heatmap,
    write_poses,
    write_session,
)
from .utils.raster import heatmap_png, write_png

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str, int, int], None]


def load_session(path: Path, config: PipelineConfig) -> Session:
    """
    Read a session directory and check its invariants.

    Raises:
        InputValidationError: Listing every violated invariant
    """
    session = read_session(path)
    report = validate_session(session, config)
    if not report.ok:
        raise InputValidationError(f"invalid session {path}: {report}")
    return session


# --- in-memory pipeline ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class BaseMap:
    """The first lifelong map and what produced it."""

    cloud: AttributedPointCloud
    removal: RemovalResult
    session: Session


@dataclass(frozen=True, eq=False)
class UpdateOutcome:
    """Everything one update step produced."""

    aligned: AlignedSession
    removal: RemovalResult
    result: UpdateResult
    coverage: CoverageGrid

    @property
    def new_map(self) -> AttributedPointCloud:
        return self.result.new_map

    @property
    def delta(self) -> DeltaMap:
        return self.result.delta


def build_base_map(session: Session, config: PipelineConfig, threads: int = 1) -> BaseMap:
    """
    Base case: the cleaned first session, with eps_g taken from eps_l.

    The session's local frame becomes the map frame.
    """
    session = session.with_poses(list(session.poses), frame_id="map")
    removal = remove_dynamic(session, config, threads)
    cloud = removal.cleaned.replace(eps_g=removal.cleaned.eps_l.copy())
    if config.compact_map:
        cloud = voxel_downsample(cloud, config.voxel_size)
    return BaseMap(cloud, removal, session)


def update_map(
    prev_map: AttributedPointCloud,
    anchors: list[tuple[Scan, Pose]],
    prev_cov: CoverageGrid,
    session: Session,
    config: PipelineConfig,
    threads: int = 1,
    detector: Optional[LoopDetector] = None,
    config_digest: str = "",
    progress: Optional[ProgressCallback] = None,
) -> UpdateOutcome:
    """
    Recursive case: align, remove dynamics, then merge into the map.

    Args:
        prev_map: Lifelong map before this session
        anchors: Map-frame scans of the previous session for loop detection
        prev_cov: Coverage of every session already in the map
        session: New session in its local frame
        config: Pipeline configuration
        threads: Worker threads for ray sampling and propagation
        detector: Loop detector (polar context by default)
        config_digest: Hash recorded in the delta map
        progress: Zipper progress callback

    Returns:
        UpdateOutcome with the new map, delta map and merged coverage
    """
    detector = detector or PolarContextDetector(config)
    seed = detector.detect(anchors, session)
    logger.info(
        "seed: anchor %d / scan %d via %s (distance %.4f)",
        seed.map_scan_index,
        seed.session_scan_index,
        detector.name,
        seed.descriptor_distance,
    )
    aligned = zipper_align(prev_map, session, seed, config, progress=progress)
    removal = remove_dynamic(aligned.as_session(), config, threads)
    result = merge_and_update(
        prev_map,
        removal.cleaned,
        prev_cov,
        removal.coverage,
        config,
        session_id=session.session_id,
        config_digest=config_digest,
    )
    return UpdateOutcome(aligned, removal, result, prev_cov.union(removal.coverage))


# --- archive commands ------------------------------------------------------


def _stage_sidecar(
    stage: OutputStage, archive_path: Path, anchors: Session, coverage: CoverageGrid, config: PipelineConfig
) -> None:
    tmp = stage.directory(sidecar_dir(archive_path))
    write_anchors(anchors, tmp / ANCHORS_DIR, config.anchor_stride)
    write_coverage(coverage, tmp / COVERAGE_FILE)


def run_init(session_dir: Path, archive_path: Path, config: PipelineConfig, threads: int = 1) -> MapArchive:
    """
    Build the base archive from the first session.

    Writes the archive plus its sidecar (anchors and coverage).
    """
    session = load_session(session_dir, config)
    base = build_base_map(session, config, threads)
    archive = MapArchive(quantize(base.cloud), config_hash(config), (session.session_id,))
    with staged_outputs() as stage:
        _stage_sidecar(stage, archive_path, base.session, base.removal.coverage, config)
        stage.write_bytes(archive_path, encode_archive(archive))
    logger.info("initialised %s with %d points", archive_path, len(archive.cloud))
    return archive


def check_config_hash(archive: MapArchive, config: PipelineConfig, force: bool = False) -> str:
    """
    Compare the archive's config hash with the current config.

    Raises:
        InputValidationError: On a mismatch unless ``force`` is set
    """
    digest = config_hash(config)
    if archive.config_hash != digest:
        message = f"archive was built with config {archive.config_hash}, current config is {digest}"
        if not force:
            raise InputValidationError(message + " (use --force to proceed)")
        logger.warning("%s; proceeding", message)
    return digest


def _write_diagnostics(lines: list[str], path: Optional[Path]) -> None:
    if path is not None:
        atomic_write_text(path, "".join(line + "\n" for line in lines))


def run_update(
    archive_path: Path,
    session_dir: Path,
    out_archive: Path,
    delta_path: Path,
    config: PipelineConfig,
    threads: int = 1,
    force: bool = False,
    detector: Optional[LoopDetector] = None,
    diagnostics_path: Optional[Path] = None,
    progress: Optional[ProgressCallback] = None,
) -> tuple[MapArchive, UpdateOutcome]:
    """
    Ingest one session into an archive.

    Nothing is written unless every stage succeeds. The sidecar, delta map
    and archive are staged under temporary names and renamed together.

    Raises:
        InputValidationError: Bad inputs or config hash mismatch without ``force``
        PipelineError: A stage failed (diagnostics are written when requested)
    """
    prev = read_archive(archive_path)
    digest = check_config_hash(prev, config, force)
    side = sidecar_dir(archive_path)
    if not side.is_dir():
        raise FormatError("archive sidecar directory is missing", side)
    anchors = read_anchors(side / ANCHORS_DIR)
    prev_cov = read_coverage(side / COVERAGE_FILE)
    session = load_session(session_dir, config)
    if session.session_id in prev.lineage:
        logger.warning("session id %s is already in the lineage", session.session_id)

    try:
        outcome = update_map(
            prev.cloud, anchors, prev_cov, session, config, threads, detector, digest, progress
        )
    except AlignmentError as e:
        _write_diagnostics(e.diagnostics, diagnostics_path)
        raise
    _write_diagnostics(outcome.aligned.diagnostic_lines(), diagnostics_path)

    archive = prev.with_session(quantize(outcome.new_map), session.session_id, digest)
    with staged_outputs() as stage:
        _stage_sidecar(stage, out_archive, outcome.aligned.as_session(), outcome.coverage, config)
        stage.write_text(delta_path, format_delta(outcome.delta))
        stage.write_bytes(out_archive, encode_archive(archive))
    logger.info("updated %s: %d -> %d points", out_archive, len(prev.cloud), len(archive.cloud))
    return archive, outcome


def static_output_path(output: Path, tau: float, multiple: bool) -> Path:
    if not multiple:
        return output
    return output.with_name(f"{output.stem}_tau{tau:.2f}{output.suffix}")


def run_extract(
    archive_path: Path,
    taus: list[float],
    output: Path,
    fmt: Optional[CloudFormat] = None,
) -> list[tuple[Path, int]]:
    """
    Write the static map at each threshold.

    With several thresholds the value is appended to the file stem.

    Returns:
        (path, point count) per threshold
    """
    archive = read_archive(archive_path)
    written = []
    for tau in taus:
        try:
            static = extract_static_map(archive.cloud, tau)
        except ValueError as e:
            raise InputValidationError(str(e)) from e
        path = static_output_path(output, tau, len(taus) > 1)
        write_cloud(static, path, fmt, archive.config_hash)
        written.append((path, len(static)))
    return written


def run_delta_replay(archive_path: Path, delta_path: Path, output: Path, config: PipelineConfig) -> MapArchive:
    """Apply a delta map to the archive it was computed against."""
    prev = read_archive(archive_path)
    delta = read_delta(delta_path)
    cloud = replay_delta(prev.cloud, delta, config)
    archive = prev.with_session(quantize(cloud), delta.session_id, delta.config_hash or prev.config_hash)
    write_archive(archive, output)
    return archive


def run_delta_rollback(archive_path: Path, delta_path: Path, output: Path, config: PipelineConfig) -> MapArchive:
    """Undo a delta map on the archive it produced."""
    current = read_archive(archive_path)
    delta = read_delta(delta_path)
    cloud = rollback_delta(current.cloud, delta, config)
    lineage = current.lineage
    if lineage and lineage[-1] == delta.session_id:
        lineage = lineage[:-1]
    else:
        logger.warning("delta session %s is not the last lineage entry", delta.session_id)
    archive = MapArchive(quantize(cloud), current.config_hash, lineage)
    write_archive(archive, output)
    return archive


def run_heatmap(
    delta_paths: list[Path],
    output: Path,
    cell: float,
    floor: float,
    png: Optional[Path] = None,
) -> Heatmap:
    deltas = [read_delta(p) for p in delta_paths]
    heatmap = export_heatmap(deltas, cell, floor)
    write_heatmap(heatmap, output)
    if png is not None:
        write_png(heatmap_png(heatmap), png)
    return heatmap


# --- evaluation ------------------------------------------------------------


def session_points(session: Session) -> np.ndarray:
    """Every scan point transformed by its pose."""
    parts = [pose.apply(scan.points) for scan, pose in zip(session.scans, session.poses)]
    return np.concatenate(parts) if parts else np.zeros((0, 3))


def load_points(path: Path) -> np.ndarray:
    """Points of a cloud file, or of a session directory in its pose frame."""
    if path.is_dir():
        return session_points(read_session(path))
    return read_cloud(path).positions


def run_eval_align(pred: Path, reference: Path, sigma_inlier: float) -> AlignmentMetrics:
    try:
        return alignment_metrics(load_points(pred), load_points(reference), sigma_inlier)
    except ValueError as e:
        raise InputValidationError(str(e)) from e


def run_eval_clean(cleaned: Path, gt_session: Path, match_radius: float) -> CleaningMetrics:
    """
    PR / RR of a cleaned map against a labeled session directory.

    Points with a moving SemanticKITTI label are dynamic, all others static.

    Raises:
        FormatError: If the session has no label files
    """
    session = read_session(gt_session)
    labels = np.concatenate(read_session_labels(gt_session, session)) if len(session) else np.zeros(0, np.uint32)
    points = session_points(session)
    dynamic = is_dynamic_label(labels)
    return cleaning_metrics(load_points(cleaned), points[~dynamic], points[dynamic], match_radius)


# --- synthetic data --------------------------------------------------------

_SEMANTIC_CODES = {
    PrimitiveClass.STATIC: LABEL_STATIC,
    PrimitiveClass.TRANSIENT: LABEL_TRANSIENT,
    PrimitiveClass.DYNAMIC: LABEL_DYNAMIC,
}


def semantic_labels(codes: np.ndarray) -> np.ndarray:
    """Map rendered class codes to SemanticKITTI label values."""
    lut = np.array([_SEMANTIC_CODES[cls] for cls in PrimitiveClass], dtype=np.uint32)
    return lut[np.asarray(codes, dtype=np.int64)]


def session_dir_name(index: int) -> str:
    return f"session_{index:02d}"


def write_labeled_session(labeled: LabeledSession, directory: Path) -> None:
    """Session layout plus labels/ and world-frame gt_poses.txt."""
    write_session(labeled.session, directory, [semantic_labels(c) for c in labeled.labels])
    write_poses(list(labeled.gt_poses), directory / "gt_poses.txt")


def run_synth(
    spec: SceneSpec,
    out_dir: Path,
    threads: int = 1,
    sessions: Optional[list[int]] = None,
    progress: Optional[ProgressCallback] = None,
) -> list[Path]:
    """
    Render a scene to session directories.

    Also writes ``scene.toml`` and, when the scene recommends settings,
    ``config.toml``.

    Returns:
        The session directories written
    """
    indices = sessions or list(range(1, spec.sessions + 1))
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "scene.toml", dump_scene(spec))
    if spec.config:
        save_config(make_config(spec.config), out_dir / "config.toml")

    written = []
    for done, t in enumerate(indices, start=1):
        labeled = render_session(spec, t, threads)
        path = out_dir / session_dir_name(t)
        write_labeled_session(labeled, path)
        written.append(path)
        logger.info("wrote %s (%d points)", path, sum(len(s) for s in labeled.session.scans))
        if progress:
            progress("synth", done, len(indices))
    return written
