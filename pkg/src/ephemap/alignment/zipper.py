"""Forward/backward scan-to-map refinement of a seeded session."""

import logging
from typing import Callable, Optional

from ..config import PipelineConfig
from ..errors import AlignmentError, InputValidationError, RegistrationError
from ..model import AttributedPointCloud, Pose, Session
from .base import AlignedSession, LoopCandidate, RegistrationResult, ScanDiagnostic
from .gicp import RegistrationSource, RegistrationTarget, prepare_source, register

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str, int, int], None]


class _ScanRegistrar:
    """Registers session scans against one prepared target, caching sources."""

    def __init__(self, target: RegistrationTarget, session: Session, config: PipelineConfig) -> None:
        self.target = target
        self.session = session
        self.config = config
        self._sources: dict[int, RegistrationSource] = {}

    def __call__(self, i: int, guess: Pose, direction: str) -> tuple[Pose, ScanDiagnostic]:
        try:
            if i not in self._sources:
                self._sources[i] = prepare_source(self.session.scans[i].points, self.config)
            result = register(self._sources[i], self.target, guess, self.config)
        except RegistrationError as e:
            failed = RegistrationResult(guess, False, 0, float("nan"), 0.0, e.condition or 0.0)
            diag = ScanDiagnostic(i, direction, failed, failed=True, message=str(e))
            logger.debug(diag.as_line())
            return guess, diag
        diag = ScanDiagnostic(i, direction, result, failed=not result.converged)
        logger.debug(diag.as_line())
        return result.transform, diag


def zipper_align(
    cloud: AttributedPointCloud,
    session: Session,
    seed: LoopCandidate,
    config: PipelineConfig,
    target: Optional[RegistrationTarget] = None,
    progress: Optional[ProgressCallback] = None,
) -> AlignedSession:
    """
    Stitch a session onto the map starting from the loop seed.

    The forward pass refines scans s..N-1, carrying each accumulated
    correction into the next initial guess. The backward pass runs from N-1
    down to 0, composing reverse corrections; scans before s start from the
    seed-corrected chain.

    Args:
        cloud: Lifelong map (eps_g weights the registration)
        session: New session in its local frame
        seed: Loop candidate with the local-to-map seed transform
        config: Pipeline configuration
        target: Prepared registration target (built from ``cloud`` when omitted)
        progress: Called as progress(pass, done, total)

    Returns:
        AlignedSession with refined map-frame poses for every scan

    Raises:
        AlignmentError: If more than max_failure_fraction of scans fail
    """
    n = len(session)
    s = seed.session_scan_index
    if not 0 <= s < n:
        raise InputValidationError(f"seed scan index {s} outside session of {n} scans")

    target = target or RegistrationTarget.from_cloud(cloud, config)
    registrar = _ScanRegistrar(target, session, config)
    guesses = [seed.initial_transform @ pose for pose in session.poses]
    diagnostics: list[ScanDiagnostic] = []

    forward = list(guesses)
    correction = Pose.identity()
    for done, i in enumerate(range(s, n), start=1):
        pose, diag = registrar(i, correction @ guesses[i], "fwd")
        diagnostics.append(diag)
        if not diag.message:
            correction = pose @ guesses[i].inverse()
        forward[i] = pose
        if progress:
            progress("forward", done, n - s)

    seed_correction = forward[s] @ guesses[s].inverse()
    refined: list[Optional[Pose]] = [None] * n
    reverse = Pose.identity()
    failures = 0
    for done, i in enumerate(range(n - 1, -1, -1), start=1):
        base = forward[i] if i >= s else seed_correction @ guesses[i]
        pose, diag = registrar(i, reverse @ base, "bwd")
        diagnostics.append(diag)
        if diag.failed:
            failures += 1
        if not diag.message:
            reverse = pose @ base.inverse()
        refined[i] = pose
        if progress:
            progress("backward", done, n)

    if failures > config.max_failure_fraction * n:
        raise AlignmentError(
            f"{failures} of {n} scans failed to register",
            diagnostics=[d.as_line() for d in diagnostics],
        )
    logger.info("aligned %d scans from seed scan %d (%d unconverged)", n, s, failures)
    return AlignedSession(
        session=session,
        refined_poses=tuple(refined),
        forward_poses=tuple(forward),
        diagnostics=tuple(diagnostics),
        seed=seed,
    )
