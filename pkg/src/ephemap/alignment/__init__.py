"""Session-to-map alignment: loop seeding and zipper refinement."""

from .base import AlignedSession, LoopCandidate, LoopDetector, ManualSeed, RegistrationResult, ScanDiagnostic
from .gicp import RegistrationTarget, prepare_source, register, weighted_gicp
from .loop import PolarContextDetector, descriptor_distance, polar_descriptor
from .zipper import zipper_align

__all__ = [
    "AlignedSession",
    "LoopCandidate",
    "LoopDetector",
    "ManualSeed",
    "PolarContextDetector",
    "RegistrationResult",
    "RegistrationTarget",
    "ScanDiagnostic",
    "descriptor_distance",
    "polar_descriptor",
    "prepare_source",
    "register",
    "weighted_gicp",
    "zipper_align",
]
