"""Baseline viewpoint-selection policies and calibration quality metrics.

Metrics follow the usual reporting units (millimeters, degrees, pixels)
even though all internal math is in meters and radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CandidatesExhausted, DegenerateInput, InsufficientFrames
from .estimator import CalibrationParams, residuals
from .geom import Pose
from .sensing import CandidateSet, MeasurementSet


@dataclass(frozen=True)
class MetricsRecord:
    """One evaluation snapshot; absolute errors need ground truth."""

    e_at_mm: float | None       # absolute translation error of cam_from_ee
    e_aR_deg: float | None      # absolute rotation error of cam_from_ee
    e_rt_mm: float              # mean relative (loop-closure) translation error
    e_rR_deg: float             # mean relative rotation error
    e_rmse_px: float            # reprojection RMSE, per observation
    e_rmse_frame_px: float      # reprojection RMSE, per-frame normalization

    def as_dict(self) -> dict:
        return {
            "e_at_mm": self.e_at_mm,
            "e_aR_deg": self.e_aR_deg,
            "e_rt_mm": self.e_rt_mm,
            "e_rR_deg": self.e_rR_deg,
            "e_rmse_px": self.e_rmse_px,
            "e_rmse_frame_px": self.e_rmse_frame_px,
        }


def end_effector_position(ee_from_base: Pose) -> np.ndarray:
    """Physical end-effector position in the base frame."""
    return ee_from_base.inverse().translation


def policy_random(candidates: CandidateSet, visited, rng) -> int:
    """Uniform choice among unvisited candidates; seeded-deterministic."""
    rng = np.random.default_rng(rng)
    unvisited = sorted(set(range(len(candidates))) - set(visited))
    if not unvisited:
        raise CandidatesExhausted("all candidates visited")
    return int(rng.choice(unvisited))


def policy_max_distance(
    candidates: CandidateSet,
    visited,
    visited_poses=None,
    mode: str = "max_min",
) -> int:
    """Unvisited candidate farthest (in R^3) from the visited end-effector
    positions.

    ``visited`` holds candidate indices (excluded from selection); distances
    are measured to ``visited_poses`` when given (e.g. off-grid initial
    views), otherwise to the visited candidates themselves. ``max_min``
    maximizes the distance to the closest visited position, ``max_sum`` the
    cumulative distance. Ties break to the lowest index.
    """
    visited = list(visited)
    if visited_poses is None:
        visited_poses = [candidates[i] for i in visited]
    if not visited_poses:
        raise ValueError("at least one visited pose is required")
    unvisited = sorted(set(range(len(candidates))) - set(visited))
    if not unvisited:
        raise CandidatesExhausted("all candidates visited")
    visited_pos = np.array([end_effector_position(p) for p in visited_poses])

    best_index, best_score = -1, -np.inf
    for index in unvisited:
        distances = np.linalg.norm(
            visited_pos - end_effector_position(candidates[index]), axis=1
        )
        score = float(distances.min() if mode == "max_min" else distances.sum())
        if score > best_score:
            best_index, best_score = index, score
    return best_index


def absolute_errors(estimated: Pose, truth: Pose) -> tuple[float, float]:
    """Absolute pose error of an estimated transform vs ground truth.

    Returns (translation error in mm, rotation angle error in deg) of
    estimated^-1 @ truth.
    """
    delta = estimated.inverse() @ truth
    e_at = 1e3 * float(np.linalg.norm(delta.translation))
    e_ar = float(np.degrees(delta.rotation_angle()))
    return e_at, e_ar


def relative_errors(
    params: CalibrationParams,
    cam_from_world_list,
    ee_from_base_list,
) -> tuple[float, float]:
    """Mean loop-closure error over validation frames.

    For each frame the chain base_from_world @ world_from_cam_k @
    cam_from_ee @ ee_from_base_k is identity under perfect calibration and
    noise-free poses; its translation norm (mm) and rotation angle (deg) are
    averaged over frames. Frames whose camera pose is None (failed PnP) are
    skipped.
    """
    trans, rots = [], []
    for cam_from_world, ee_from_base in zip(cam_from_world_list, ee_from_base_list):
        if cam_from_world is None:
            continue
        delta = (
            params.base_from_world
            @ cam_from_world.inverse()
            @ params.cam_from_ee
            @ ee_from_base
        )
        trans.append(np.linalg.norm(delta.translation))
        rots.append(delta.rotation_angle())
    if not trans:
        raise InsufficientFrames("no frame with a valid camera pose")
    return 1e3 * float(np.mean(trans)), float(np.degrees(np.mean(rots)))


def _squared_residuals_per_frame(params, msets, board, intrinsics):
    sq_sums = []
    counts = []
    for mset in msets:
        r = residuals(params, mset, board, intrinsics).values
        sq_sums.append(float(r @ r))
        counts.append(len(r) // 2)
    return np.array(sq_sums), np.array(counts)


def reprojection_rmse(
    params: CalibrationParams,
    msets: list[MeasurementSet],
    board,
    intrinsics,
) -> float:
    """Test-set reprojection RMSE with per-frame normalization.

    Sums each frame's squared residual norms over all its markers and
    divides by (K - 1) frames, so the value grows with the marker count per
    frame. See reprojection_rmse_per_obs for the conventional variant.
    """
    if len(msets) < 2:
        raise InsufficientFrames("per-frame RMSE needs at least 2 frames")
    sq_sums, _ = _squared_residuals_per_frame(params, msets, board, intrinsics)
    return float(np.sqrt(sq_sums.sum() / (len(msets) - 1)))


def reprojection_rmse_per_obs(
    params: CalibrationParams,
    msets: list[MeasurementSet],
    board,
    intrinsics,
) -> float:
    """Root mean squared pixel-residual norm per observation."""
    sq_sums, counts = _squared_residuals_per_frame(params, msets, board, intrinsics)
    return float(np.sqrt(sq_sums.sum() / counts.sum()))


def pearson_correlation(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 3:
        raise DegenerateInput("need at least 3 paired samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(dx @ dx))
    sy = float(np.sqrt(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInput("zero variance input")
    return float((dx @ dy) / (sx * sy))


def evaluate_params(
    params: CalibrationParams,
    truth: CalibrationParams | None,
    validation_msets: list[MeasurementSet],
    validation_cam_poses,
    board,
    intrinsics,
) -> MetricsRecord:
    """All metrics for one estimate against a held-out validation set."""
    e_at = e_ar = None
    if truth is not None:
        e_at, e_ar = absolute_errors(params.cam_from_ee, truth.cam_from_ee)
    e_rt, e_rr = relative_errors(
        params, validation_cam_poses, [m.robot_pose for m in validation_msets]
    )
    return MetricsRecord(
        e_at,
        e_ar,
        e_rt,
        e_rr,
        reprojection_rmse_per_obs(params, validation_msets, board, intrinsics),
        reprojection_rmse(params, validation_msets, board, intrinsics),
    )
