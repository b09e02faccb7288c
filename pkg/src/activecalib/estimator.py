"""Calibration core: reprojection residuals, analytic Jacobians, and solvers.

The unknowns are two rigid transforms: ``cam_from_ee`` (end-effector to
camera) and ``base_from_world`` (world to base). A board point p_w observed
from robot pose ``ee_from_base`` projects through the chain

    p_cam = cam_from_ee @ ee_from_base @ base_from_world @ p_w

and the residual is (observed pixel) - (projected pixel). The 12-dimensional
parameter vector stacks the two left-multiplicative twists as
[xi_cam_from_ee | xi_base_from_world], translation-first within each twist.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    DegenerateMotion,
    SingularSystem,
    UnknownMarker,
)
from .geom import Pose, exp_se3, log_se3, project_to_so3, skew
from .sensing import CameraIntrinsics, MeasurementSet, TargetBoard, project, project_jacobian


@dataclass(frozen=True)
class CalibrationParams:
    """The calibration unknowns."""

    cam_from_ee: Pose
    base_from_world: Pose


@dataclass(frozen=True, eq=False)
class ResidualBlock:
    """Stacked 2-vector residuals (px) for one measurement set."""

    values: np.ndarray      # (2m,), ordered by marker id, u before v
    marker_ids: np.ndarray  # (m,)


@dataclass(frozen=True, eq=False)
class JacobianBlock:
    """Residual derivatives for one measurement set, one (2m, 6) block per transform."""

    d_cam_from_ee: np.ndarray      # called F in the math notes
    d_base_from_world: np.ndarray  # called E in the math notes

    def stacked(self) -> np.ndarray:
        return np.hstack([self.d_cam_from_ee, self.d_base_from_world])


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50
    cost_abs_tol: float = 1e-18
    cost_rel_tol: float = 1e-12
    step_tol: float = 1e-12
    init_damping: float = 1e-4
    damping_factor: float = 10.0
    max_damping: float = 1e12

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if min(self.cost_abs_tol, self.cost_rel_tol, self.step_tol) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class SolveReport:
    params: CalibrationParams
    n_iterations: int
    initial_cost: float
    final_cost: float
    cost_trace: tuple[float, ...]   # accepted-step costs, non-increasing
    converged: bool
    reason: str


@dataclass(frozen=True, eq=False)
class NormalSystem:
    """Stacked residual/Jacobian and the Gauss-Newton normal equations."""

    residual: np.ndarray   # (2M,)
    jacobian: np.ndarray   # (2M, 12)
    hessian: np.ndarray    # (12, 12) = J^T J
    gradient: np.ndarray   # (12,)   = J^T r


def _chain_points(
    params: CalibrationParams,
    mset: MeasurementSet,
    board: TargetBoard,
):
    ids = mset.marker_ids()
    if ids.min() < 0 or ids.max() >= len(board):
        raise UnknownMarker(f"marker id outside 0..{len(board) - 1}")
    pts_world = board.points[ids]
    pts_base = params.base_from_world.act(pts_world)
    cam_from_base = params.cam_from_ee @ mset.robot_pose
    pts_cam = cam_from_base.act(pts_base)
    return ids, pts_base, pts_cam, cam_from_base


def residuals(
    params: CalibrationParams,
    mset: MeasurementSet,
    board: TargetBoard,
    intrinsics: CameraIntrinsics,
) -> ResidualBlock:
    """Reprojection residuals (observed - projected), ordered by marker id."""
    ids, _, pts_cam, _ = _chain_points(params, mset, board)
    predicted = project(intrinsics, pts_cam)
    values = (mset.pixels() - predicted).reshape(-1)
    return ResidualBlock(values, ids)


def pose_point_jacobian(pts: np.ndarray) -> np.ndarray:
    """d(exp(xi) @ T @ p)/d(xi) at xi = 0, as an (m, 3, 6) stack [I | -[p]x]."""
    m = len(pts)
    out = np.zeros((m, 3, 6))
    out[:, :, :3] = np.eye(3)
    out[:, 0, 4] = pts[:, 2]
    out[:, 0, 5] = -pts[:, 1]
    out[:, 1, 3] = -pts[:, 2]
    out[:, 1, 5] = pts[:, 0]
    out[:, 2, 3] = pts[:, 1]
    out[:, 2, 4] = -pts[:, 0]
    return out


def jacobian_block(
    params: CalibrationParams,
    mset: MeasurementSet,
    board: TargetBoard,
    intrinsics: CameraIntrinsics,
) -> JacobianBlock:
    """Analytic residual Jacobian for one measurement set.

    Rows follow the residual ordering. The left perturbation makes both
    blocks closed-form:

      d r / d xi_cam_from_ee   = -(du/dP_cam) [I | -[P_cam]x]
      d r / d xi_base_from_world
                               = -(du/dP_cam) R_cam_from_base [I | -[P_base]x]

    with P_base the board point in the base frame. The leading minus is the
    residual sign (observed - projected).
    """
    _, pts_base, pts_cam, cam_from_base = _chain_points(params, mset, board)
    duv = project_jacobian(intrinsics, pts_cam)  # (m, 2, 3)

    d_ce = -np.einsum("mij,mjk->mik", duv, pose_point_jacobian(pts_cam))
    d_bw_pts = np.einsum("ij,mjk->mik", cam_from_base.rotation, pose_point_jacobian(pts_base))
    d_bw = -np.einsum("mij,mjk->mik", duv, d_bw_pts)
    m = len(pts_cam)
    return JacobianBlock(d_ce.reshape(2 * m, 6), d_bw.reshape(2 * m, 6))


def assemble(
    params: CalibrationParams,
    msets: list[MeasurementSet],
    board: TargetBoard,
    intrinsics: CameraIntrinsics,
) -> NormalSystem:
    """Stack residuals/Jacobians over all measurement sets and form J^T J, J^T r."""
    res_parts = []
    jac_parts = []
    for mset in msets:
        res_parts.append(residuals(params, mset, board, intrinsics).values)
        jac_parts.append(jacobian_block(params, mset, board, intrinsics).stacked())
    residual = np.concatenate(res_parts)
    jacobian = np.vstack(jac_parts)
    return NormalSystem(residual, jacobian, jacobian.T @ jacobian, jacobian.T @ residual)


def _apply_step(params: CalibrationParams, step: np.ndarray) -> CalibrationParams:
    return CalibrationParams(
        exp_se3(step[:6]) @ params.cam_from_ee,
        exp_se3(step[6:]) @ params.base_from_world,
    )


def _cost(params, msets, board, intrinsics) -> float:
    total = 0.0
    for mset in msets:
        r = residuals(params, mset, board, intrinsics).values
        total += float(r @ r)
    return total


def optimize(
    initial: CalibrationParams,
    msets: list[MeasurementSet],
    board: TargetBoard,
    intrinsics: CameraIntrinsics,
    config: SolverConfig = SolverConfig(),
) -> SolveReport:
    """Levenberg-Marquardt minimization of the summed squared reprojection error.

    Steps are applied as left-multiplicative twists per transform. Accepted
    steps never increase the cost; rejected steps raise the damping.
    """
    params = initial
    cost = _cost(params, msets, board, intrinsics)
    trace = [cost]
    if cost <= config.cost_abs_tol:
        return SolveReport(params, 0, cost, cost, tuple(trace), True, "cost_abs_tol")

    damping = config.init_damping
    n_iter = 0
    converged = False
    reason = "max_iterations"
    identity = np.eye(12)

    for n_iter in range(1, config.max_iterations + 1):
        system = assemble(params, msets, board, intrinsics)
        accepted = False
        while True:
            try:
                step = np.linalg.solve(
                    system.hessian + damping * identity, -system.gradient
                )
            except np.linalg.LinAlgError:
                step = None
            if step is None or not np.all(np.isfinite(step)):
                damping *= config.damping_factor
                if damping > config.max_damping:
                    raise SingularSystem(
                        "normal equations unsolvable at maximum damping"
                    )
                continue
            if np.linalg.norm(step) <= config.step_tol:
                converged, reason = True, "step_tol"
                break
            candidate = _apply_step(params, step)
            try:
                new_cost = _cost(candidate, msets, board, intrinsics)
            except BehindCamera:
                # Trial step left the feasible region; treat as a rejection.
                new_cost = np.inf
            if new_cost < cost:
                params, cost = candidate, new_cost
                trace.append(cost)
                damping = max(damping / config.damping_factor, 1e-15)
                accepted = True
                break
            damping *= config.damping_factor
            if damping > config.max_damping:
                # Cannot improve even with a near-zero step: we are at a minimum.
                converged, reason = True, "stalled"
                break
        if converged:
            break
        if accepted:
            if cost <= config.cost_abs_tol:
                converged, reason = True, "cost_abs_tol"
                break
            if trace[-2] - cost <= config.cost_rel_tol * trace[-2]:
                converged, reason = True, "cost_rel_tol"
                break

    return SolveReport(params, n_iter, trace[0], cost, tuple(trace), converged, reason)


def left_error_twist(estimated: CalibrationParams, reference: CalibrationParams) -> np.ndarray:
    """12-vector of left-multiplicative error twists (estimated vs reference)."""
    return np.concatenate(
        [
            log_se3(estimated.cam_from_ee @ reference.cam_from_ee.inverse()),
            log_se3(estimated.base_from_world @ reference.base_from_world.inverse()),
        ]
    )


# --- linear initialization -------------------------------------------------

# Relative gap between the top two singular values of the rotation system
# below which the motion cannot pin down a unique rotation pair.
_ROTATION_GAP_TOL = 1e-6


def closed_form_init(
    cam_from_world_list: list[Pose],
    ee_from_base_list: list[Pose],
) -> CalibrationParams:
    """Linear initializer from per-frame camera poses and robot poses.

    Solves cam_from_ee @ ee_from_base_k = cam_from_world_k @ world_from_base
    for the two unknowns: rotations first via the Kronecker-lifted linear
    system (top singular pair, then projection onto SO(3)), translations
    second via ordinary least squares.

    Raises DegenerateMotion when the rotation system is rank deficient,
    which happens when all relative robot rotations share one axis.
    """
    n = len(cam_from_world_list)
    if n != len(ee_from_base_list):
        raise ValueError("pose lists must have equal length")
    if n < 3:
        raise DegenerateMotion(f"need at least 3 pose pairs, got {n}")

    lifted = np.zeros((9, 9))
    for cam_from_world, ee_from_base in zip(cam_from_world_list, ee_from_base_list):
        lifted += np.kron(ee_from_base.rotation, cam_from_world.rotation)
    u, s, vt = np.linalg.svd(lifted)
    if (s[0] - s[1]) / s[0] < _ROTATION_GAP_TOL:
        raise DegenerateMotion(
            "rotation system rank deficient (parallel rotation axes)"
        )
    x = vt[0].reshape(3, 3, order="F")  # world_from_base rotation, up to scale/sign
    y = u[:, 0].reshape(3, 3, order="F")  # cam_from_ee rotation, up to scale/sign
    if np.linalg.det(x) < 0.0:
        x, y = -x, -y
    r_world_from_base = project_to_so3(x)
    r_cam_from_ee = project_to_so3(y)

    lhs = np.zeros((3 * n, 6))
    rhs = np.zeros(3 * n)
    for k, (cam_from_world, ee_from_base) in enumerate(
        zip(cam_from_world_list, ee_from_base_list)
    ):
        lhs[3 * k : 3 * k + 3, :3] = np.eye(3)
        lhs[3 * k : 3 * k + 3, 3:] = -cam_from_world.rotation
        rhs[3 * k : 3 * k + 3] = (
            cam_from_world.translation - r_cam_from_ee @ ee_from_base.translation
        )
    solution, _, rank, _ = np.linalg.lstsq(lhs, rhs, rcond=None)
    if rank < 6:
        raise DegenerateMotion("translation system rank deficient")
    cam_from_ee = Pose(r_cam_from_ee, solution[:3])
    world_from_base = Pose(r_world_from_base, solution[3:])
    return CalibrationParams(cam_from_ee, world_from_base.inverse())


# --- planar PnP ------------------------------------------------------------


def _normalizing_similarity(points: np.ndarray) -> np.ndarray:
    """3x3 similarity moving 2D points to zero mean and sqrt(2) RMS radius."""
    centroid = points.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((points - centroid) ** 2, axis=1)))
    scale = np.sqrt(2.0) / max(rms, 1e-12)
    out = np.eye(3)
    out[0, 0] = out[1, 1] = scale
    out[:2, 2] = -scale * centroid
    return out


def _homography_dlt(board_xy: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """Normalized DLT estimate of the board-plane-to-image homography."""
    t_world = _normalizing_similarity(board_xy)
    t_pixel = _normalizing_similarity(pixels)
    ones = np.ones((len(board_xy), 1))
    pw = np.hstack([board_xy, ones]) @ t_world.T
    px = np.hstack([pixels, ones]) @ t_pixel.T

    rows = np.zeros((2 * len(pw), 9))
    rows[0::2, 0:3] = -pw
    rows[0::2, 6:9] = px[:, [0]] * pw
    rows[1::2, 3:6] = -pw
    rows[1::2, 6:9] = px[:, [1]] * pw
    _, s, vt = np.linalg.svd(rows)
    if s[7] / s[0] < 1e-10:
        raise DegenerateConfiguration("homography system rank deficient")
    h_norm = vt[-1].reshape(3, 3)
    return np.linalg.inv(t_pixel) @ h_norm @ t_world


def _refine_camera_pose(
    cam_from_world: Pose,
    pts_world: np.ndarray,
    pixels: np.ndarray,
    intrinsics: CameraIntrinsics,
    max_iterations: int = 30,
) -> Pose:
    """Damped Gauss-Newton on the 6-dof camera pose, left perturbation."""
    pose = cam_from_world
    damping = 1e-6
    cost = None
    for _ in range(max_iterations):
        pts_cam = pose.act(pts_world)
        if np.any(pts_cam[:, 2] <= 1e-9):
            raise DegenerateConfiguration("refinement drove points behind the camera")
        r = (pixels - project(intrinsics, pts_cam)).reshape(-1)
        if cost is None:
            cost = float(r @ r)
        duv = project_jacobian(intrinsics, pts_cam)
        jac = -np.einsum("mij,mjk->mik", duv, pose_point_jacobian(pts_cam))
        jac = jac.reshape(-1, 6)
        h = jac.T @ jac
        g = jac.T @ r
        while True:
            step = np.linalg.solve(h + damping * np.eye(6), -g)
            if np.linalg.norm(step) < 1e-14:
                return pose
            candidate = exp_se3(step) @ pose
            pts_cam = candidate.act(pts_world)
            if np.all(pts_cam[:, 2] > 1e-9):
                r_new = (pixels - project(intrinsics, pts_cam)).reshape(-1)
                new_cost = float(r_new @ r_new)
                if new_cost < cost:
                    pose, cost = candidate, new_cost
                    damping = max(damping / 10.0, 1e-12)
                    break
            damping *= 10.0
            if damping > 1e12:
                return pose
    return pose


def solve_pnp(
    board: TargetBoard,
    observations,
    intrinsics: CameraIntrinsics,
) -> Pose:
    """Camera pose (world -> camera) from pixel observations of board markers.

    Planar homography DLT (Hartley-normalized) for the initial pose, then
    damped Gauss-Newton refinement of the reprojection error. All board
    points end up in front of the camera.
    """
    observations = list(observations)
    if len(observations) < 4:
        raise DegenerateConfiguration(
            f"PnP needs at least 4 points, got {len(observations)}"
        )
    ids = np.array([obs.marker_id for obs in observations], dtype=int)
    if ids.min() < 0 or ids.max() >= len(board):
        raise UnknownMarker(f"marker id outside 0..{len(board) - 1}")
    pixels = np.array([[obs.u, obs.v] for obs in observations])
    pts_world = board.points[ids]
    board_xy = pts_world[:, :2]

    centered = board_xy - board_xy.mean(axis=0)
    spread = np.linalg.svd(centered, compute_uv=False)
    if spread[1] / spread[0] < 1e-9:
        raise DegenerateConfiguration("board points are collinear")

    homography = _homography_dlt(board_xy, pixels)
    k_matrix = np.array(
        [
            [intrinsics.fx, 0.0, intrinsics.cx],
            [0.0, intrinsics.fy, intrinsics.cy],
            [0.0, 0.0, 1.0],
        ]
    )
    m = np.linalg.solve(k_matrix, homography)
    scale = 2.0 / (np.linalg.norm(m[:, 0]) + np.linalg.norm(m[:, 1]))
    r0, r1, t = scale * m[:, 0], scale * m[:, 1], scale * m[:, 2]
    # Board centroid is the world origin; it must sit at positive depth.
    if t[2] < 0.0:
        r0, r1, t = -r0, -r1, -t
    rotation = project_to_so3(np.column_stack([r0, r1, np.cross(r0, r1)]))
    initial = Pose(rotation, t)

    refined = _refine_camera_pose(initial, pts_world, pixels, intrinsics)
    if np.any(refined.act(pts_world)[:, 2] <= 1e-9):
        raise DegenerateConfiguration("refined pose leaves points behind the camera")
    return refined
