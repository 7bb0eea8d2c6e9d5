"""Replay-buffer construction and geometric tooling for keyframe-based imitation learning."""

from demoforge.demo import (
    ActionRecord,
    CloudFormatError,
    Demonstration,
    Frame,
    PointCloud,
    Pose,
    ValidationReport,
    Violation,
    Workspace,
    load_demopack,
    save_demopack,
    validate_demonstration,
)

__version__ = "0.1.0"

__all__ = [
    "ActionRecord",
    "CloudFormatError",
    "Demonstration",
    "Frame",
    "PointCloud",
    "Pose",
    "ValidationReport",
    "Violation",
    "Workspace",
    "load_demopack",
    "save_demopack",
    "validate_demonstration",
]
