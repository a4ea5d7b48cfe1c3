"""Types shared by the alignment stage and the loop detector interface."""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

from ..errors import InputValidationError
from ..model import Pose, Scan, Session


@dataclass(frozen=True)
class LoopCandidate:
    """A matched (anchor scan, session scan) pair and the seed transform it implies.

    ``initial_transform`` maps the session's local frame into the map frame.
    """

    map_scan_index: int
    session_scan_index: int
    initial_transform: Pose
    descriptor_distance: float
    yaw: float = 0.0


@dataclass(frozen=True)
class RegistrationResult:
    """Outcome of one scan-to-map registration."""

    transform: Pose
    converged: bool
    iterations: int
    final_cost: float
    inlier_fraction: float
    condition: float = 0.0


@dataclass(frozen=True)
class ScanDiagnostic:
    """Per-scan record of one zipper pass."""

    scan_index: int
    direction: str
    result: RegistrationResult
    failed: bool = False
    message: str = ""

    def as_line(self) -> str:
        r = self.result
        return (
            f"scan={self.scan_index} pass={self.direction} iterations={r.iterations} "
            f"cost={r.final_cost:.6g} inliers={r.inlier_fraction:.4f} "
            f"converged={int(r.converged)}" + (f" error={self.message}" if self.message else "")
        )


@dataclass(frozen=True, eq=False)
class AlignedSession:
    """A session plus its refined map-frame poses."""

    session: Session
    refined_poses: tuple[Pose, ...]
    forward_poses: tuple[Pose, ...] = ()
    diagnostics: tuple[ScanDiagnostic, ...] = ()
    seed: Optional[LoopCandidate] = None

    def as_session(self) -> Session:
        """The session re-expressed in map frame."""
        return self.session.with_poses(list(self.refined_poses), frame_id="map")

    def diagnostic_lines(self) -> list[str]:
        return [d.as_line() for d in self.diagnostics]


class LoopDetector(ABC):
    """Finds a place-recognition match between map anchors and a new session."""

    @property
    @abstractmethod
    def name(self) -> str:
        """Return the detector name."""
        pass

    @abstractmethod
    def detect(self, anchors: list[tuple[Scan, Pose]], session: Session) -> LoopCandidate:
        """
        Find the best anchor/session scan pair.

        Args:
            anchors: Map anchor scans with their map-frame poses
            session: New session in its local frame

        Returns:
            LoopCandidate with the seed transform

        Raises:
            LoopNotFoundError: If no pair passes the similarity gate
        """
        pass


@dataclass(frozen=True)
class ManualSeed(LoopDetector):
    """User-supplied seed transform; skips place recognition."""

    initial_transform: Pose = field(default_factory=Pose.identity)
    session_scan_index: int = 0
    map_scan_index: int = 0

    @property
    def name(self) -> str:
        return "manual"

    def detect(self, anchors: list[tuple[Scan, Pose]], session: Session) -> LoopCandidate:
        if not 0 <= self.session_scan_index < len(session):
            raise InputValidationError(
                f"seed scan {self.session_scan_index} outside session of {len(session)} scans"
            )
        return LoopCandidate(
            map_scan_index=self.map_scan_index,
            session_scan_index=self.session_scan_index,
            initial_transform=self.initial_transform,
            descriptor_distance=0.0,
        )
