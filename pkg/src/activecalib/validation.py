"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

from .errors import InvariantViolation, UnknownMarker
from .geom import Pose
from .sensing import CameraIntrinsics, MeasurementSet, TargetBoard


def check_intrinsics(value) -> CameraIntrinsics:
    if not isinstance(value, CameraIntrinsics):
        raise TypeError(f"expected CameraIntrinsics, got {type(value).__name__}")
    return value


def check_board(value) -> TargetBoard:
    if not isinstance(value, TargetBoard):
        raise TypeError(f"expected TargetBoard, got {type(value).__name__}")
    return value


def check_pose(value, name: str = "pose") -> Pose:
    if not isinstance(value, Pose):
        raise TypeError(f"{name}: expected Pose, got {type(value).__name__}")
    return value


def check_measurement_sets(
    X,
    board: TargetBoard | None = None,
    intrinsics: CameraIntrinsics | None = None,
    min_sets: int = 1,
) -> list[MeasurementSet]:
    """Validate a collection of measurement sets against the board and image."""
    msets = list(X)
    if len(msets) < min_sets:
        raise InvariantViolation(f"need at least {min_sets} measurement sets, got {len(msets)}")
    for k, mset in enumerate(msets):
        if not isinstance(mset, MeasurementSet):
            raise TypeError(
                f"measurements[{k}]: expected MeasurementSet, got {type(mset).__name__}"
            )
        if board is not None:
            ids = mset.marker_ids()
            if ids.min() < 0 or ids.max() >= len(board):
                raise UnknownMarker(
                    f"measurements[{k}]: marker id outside 0..{len(board) - 1}"
                )
        if intrinsics is not None:
            uv = mset.pixels()
            inside = (
                (uv[:, 0] >= 0)
                & (uv[:, 0] < intrinsics.width)
                & (uv[:, 1] >= 0)
                & (uv[:, 1] < intrinsics.height)
            )
            if not inside.all():
                raise InvariantViolation(
                    f"measurements[{k}]: observation outside the image bounds"
                )
    return msets


def check_poses(values, name: str = "poses") -> list[Pose]:
    poses = list(values)
    for k, pose in enumerate(poses):
        check_pose(pose, f"{name}[{k}]")
    return poses
