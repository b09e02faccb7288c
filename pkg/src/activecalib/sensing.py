"""Pinhole camera, planar target, viewpoint candidates, and the synthetic workcell.

The workcell simulator stands in for the physical robot + camera: commanded
end-effector poses come in, noisy pixel observations and noisy reported robot
poses come out. Everything is a pure function of its inputs and an explicit
RNG, so whole experiments are reproducible from a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadDimensions,
    BehindCamera,
    EmptyCandidateSet,
    InvariantViolation,
    MarkerOutOfView,
)
from .geom import Pose, exp_se3

_MIN_DEPTH = 1e-9
# A measurement with fewer markers cannot anchor a camera pose.
MIN_VISIBLE_MARKERS = 4


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters, pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvariantViolation("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvariantViolation("principal point must lie inside the image")


@dataclass(frozen=True, eq=False)
class TargetBoard:
    """Planar grid of markers; marker id j is row j of ``points``.

    Points live in the world frame with z = 0 and the grid centroid at the
    origin, so the board itself defines the world frame.
    """

    points: np.ndarray
    rows: int
    cols: int
    spacing: float

    def __post_init__(self):
        points = np.array(self.points, dtype=float).reshape(-1, 3)
        points.flags.writeable = False
        object.__setattr__(self, "points", points)
        if len(points) != self.rows * self.cols:
            raise InvariantViolation("point count must equal rows * cols")
        if np.any(np.abs(points[:, 2]) > 1e-12):
            raise InvariantViolation("board points must be coplanar with z = 0")

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class PixelObservation:
    marker_id: int
    u: float
    v: float


@dataclass(frozen=True)
class MeasurementSet:
    """One reported robot pose plus the pixel detections captured from it.

    ``robot_pose`` maps base-frame coordinates into the end-effector frame.
    """

    robot_pose: Pose
    observations: tuple[PixelObservation, ...]

    def __post_init__(self):
        if len(self.observations) == 0:
            raise InvariantViolation("measurement set must contain observations")
        ids = [obs.marker_id for obs in self.observations]
        if len(set(ids)) != len(ids):
            raise InvariantViolation("duplicate marker id in measurement set")
        object.__setattr__(self, "observations", tuple(self.observations))

    def marker_ids(self) -> np.ndarray:
        return np.array([obs.marker_id for obs in self.observations], dtype=int)

    def pixels(self) -> np.ndarray:
        return np.array([[obs.u, obs.v] for obs in self.observations])


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian sensor noise: isotropic pixel noise plus a random left twist
    applied to the reported robot pose.

    Defaults assume an industrial arm whose repeatability error stays well
    below the pixel noise once projected; the information model treats pixel
    noise as the only error source, so these magnitudes keep it faithful.
    """

    pixel_sigma: float = 0.5            # px
    robot_rot_sigma: float = np.deg2rad(0.01)   # rad
    robot_trans_sigma: float = 1e-4     # m

    def __post_init__(self):
        if min(self.pixel_sigma, self.robot_rot_sigma, self.robot_trans_sigma) < 0:
            raise InvariantViolation("noise sigmas must be non-negative")

    @staticmethod
    def exact() -> "NoiseModel":
        return NoiseModel(0.0, 0.0, 0.0)


def project(intrinsics: CameraIntrinsics, points_cam: np.ndarray) -> np.ndarray:
    """Perspective projection of camera-frame points to pixels.

    Accepts one 3-point or an (N, 3) array; the output shape matches.
    Raises BehindCamera if any depth is <= 1e-9.
    """
    pts = np.asarray(points_cam, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    if np.any(z <= _MIN_DEPTH):
        raise BehindCamera(f"depth {z.min()!r} not positive")
    uv = np.empty((len(pts), 2))
    uv[:, 0] = intrinsics.fx * pts[:, 0] / z + intrinsics.cx
    uv[:, 1] = intrinsics.fy * pts[:, 1] / z + intrinsics.cy
    return uv[0] if single else uv


def project_jacobian(intrinsics: CameraIntrinsics, points_cam: np.ndarray) -> np.ndarray:
    """Derivative of project() w.r.t. the camera-frame point.

    Returns (2, 3) for one point, (N, 2, 3) for a batch.
    """
    pts = np.asarray(points_cam, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    if np.any(z <= _MIN_DEPTH):
        raise BehindCamera(f"depth {z.min()!r} not positive")
    jac = np.zeros((len(pts), 2, 3))
    jac[:, 0, 0] = intrinsics.fx / z
    jac[:, 0, 2] = -intrinsics.fx * x / (z * z)
    jac[:, 1, 1] = intrinsics.fy / z
    jac[:, 1, 2] = -intrinsics.fy * y / (z * z)
    return jac[0] if single else jac


def make_board(rows: int, cols: int, spacing: float) -> TargetBoard:
    """Symmetric grid target with row-major marker ids, centered on the origin."""
    if rows < 2 or cols < 2 or spacing <= 0:
        raise BadDimensions(f"invalid board dimensions ({rows}, {cols}, {spacing})")
    i, j = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    points = np.zeros((rows * cols, 3))
    points[:, 0] = (i.ravel() - (rows - 1) / 2.0) * spacing
    points[:, 1] = (j.ravel() - (cols - 1) / 2.0) * spacing
    return TargetBoard(points, rows, cols, spacing)


@dataclass(frozen=True)
class CandidateGeometry:
    """Spherical-cap grid of camera stations around the board center.

    Radii in meters, angles in radians. Azimuth spans [0, 2*pi); elevation is
    measured from the board plane (pi/2 = straight above).
    """

    radius_min: float = 0.45
    radius_max: float = 0.60
    n_radii: int = 2
    n_azimuths: int = 8
    elevation_min: float = np.deg2rad(40.0)
    elevation_max: float = np.deg2rad(65.0)
    n_elevations: int = 3

    def __post_init__(self):
        if min(self.n_radii, self.n_azimuths, self.n_elevations) < 1:
            raise InvariantViolation("grid counts must be positive")
        if self.radius_min <= 0 or self.radius_max < self.radius_min:
            raise InvariantViolation("invalid radius range")

    def radii(self) -> np.ndarray:
        return np.linspace(self.radius_min, self.radius_max, self.n_radii)

    def azimuths(self) -> np.ndarray:
        return np.arange(self.n_azimuths) * 2.0 * np.pi / self.n_azimuths

    def elevations(self) -> np.ndarray:
        return np.linspace(self.elevation_min, self.elevation_max, self.n_elevations)


@dataclass(frozen=True)
class CandidateSet:
    """Candidate robot poses; a candidate's stable index is its position."""

    poses: tuple[Pose, ...]

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, index: int) -> Pose:
        return self.poses[index]


@dataclass(frozen=True)
class Workcell:
    """Ground-truth scene plus sensor models: the simulator for one workcell."""

    cam_from_ee: Pose        # true end-effector -> camera transform
    base_from_world: Pose    # true world -> base transform
    board: TargetBoard
    intrinsics: CameraIntrinsics
    noise: NoiseModel = field(default_factory=NoiseModel)

    def cam_from_world(self, ee_from_base: Pose) -> Pose:
        return self.cam_from_ee @ ee_from_base @ self.base_from_world

    def measure(self, ee_from_base: Pose, rng=None) -> MeasurementSet:
        return simulate_measurement(
            self.cam_from_ee,
            self.base_from_world,
            ee_from_base,
            self.board,
            self.intrinsics,
            self.noise,
            rng,
        )


def camera_station(radius: float, azimuth: float, elevation: float) -> Pose:
    """World pose of a camera on the viewing sphere, looking at the origin.

    The optical axis (+z of the camera) points at the board center; in-plane
    roll is fixed by aligning camera x with the projection of world x.
    """
    position = radius * np.array(
        [
            np.cos(elevation) * np.cos(azimuth),
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
        ]
    )
    z_axis = -position / np.linalg.norm(position)
    reference = np.array([1.0, 0.0, 0.0])
    x_axis = reference - (reference @ z_axis) * z_axis
    if np.linalg.norm(x_axis) < 1e-9:
        reference = np.array([0.0, 1.0, 0.0])
        x_axis = reference - (reference @ z_axis) * z_axis
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    world_from_cam = Pose(np.column_stack([x_axis, y_axis, z_axis]), position)
    return world_from_cam


def robot_pose_for_camera(world_from_cam: Pose, workcell: Workcell) -> Pose:
    """Commanded robot pose that places the true camera at the given station."""
    cam_from_world = world_from_cam.inverse()
    return (
        workcell.cam_from_ee.inverse()
        @ cam_from_world
        @ workcell.base_from_world.inverse()
    )


def board_visible(workcell: Workcell, ee_from_base: Pose, margin: float = 0.0) -> bool:
    """True when every marker projects inside the image (inset by margin px)."""
    cam_from_world = workcell.cam_from_world(ee_from_base)
    pts_cam = cam_from_world.act(workcell.board.points)
    if np.any(pts_cam[:, 2] <= _MIN_DEPTH):
        return False
    uv = project(workcell.intrinsics, pts_cam)
    k = workcell.intrinsics
    return bool(
        np.all(uv[:, 0] >= margin)
        and np.all(uv[:, 0] < k.width - margin)
        and np.all(uv[:, 1] >= margin)
        and np.all(uv[:, 1] < k.height - margin)
    )


def generate_candidates(geometry: CandidateGeometry, workcell: Workcell) -> CandidateSet:
    """Grid of candidate robot poses over the spherical cap, visibility filtered.

    Iteration order (radius, then elevation, then azimuth) fixes the stable
    candidate indices.
    """
    poses = []
    for radius in geometry.radii():
        for elevation in geometry.elevations():
            for azimuth in geometry.azimuths():
                station = camera_station(radius, azimuth, elevation)
                ee_from_base = robot_pose_for_camera(station, workcell)
                if board_visible(workcell, ee_from_base):
                    poses.append(ee_from_base)
    if not poses:
        raise EmptyCandidateSet("no candidate pose passed the visibility check")
    return CandidateSet(tuple(poses))


def sample_viewpoints(
    geometry: CandidateGeometry,
    workcell: Workcell,
    count: int,
    rng=None,
    margin: float = 10.0,
    max_tries: int = 10_000,
) -> list[Pose]:
    """Random visible robot poses drawn uniformly over the candidate cap.

    Used for held-out validation viewpoints; the margin keeps noisy
    projections inside the image.
    """
    rng = np.random.default_rng(rng)
    poses: list[Pose] = []
    for _ in range(max_tries):
        if len(poses) == count:
            break
        radius = rng.uniform(geometry.radius_min, geometry.radius_max)
        azimuth = rng.uniform(0.0, 2.0 * np.pi)
        elevation = rng.uniform(geometry.elevation_min, geometry.elevation_max)
        station = camera_station(radius, azimuth, elevation)
        ee_from_base = robot_pose_for_camera(station, workcell)
        if board_visible(workcell, ee_from_base, margin=margin):
            poses.append(ee_from_base)
    if len(poses) < count:
        raise EmptyCandidateSet(f"only {len(poses)}/{count} visible viewpoints found")
    return poses


def simulate_measurement(
    cam_from_ee: Pose,
    base_from_world: Pose,
    ee_from_base: Pose,
    board: TargetBoard,
    intrinsics: CameraIntrinsics,
    noise: NoiseModel,
    rng=None,
) -> MeasurementSet:
    """Synthesize one measurement set from a commanded robot pose.

    Pixels are the exact projections through the ground-truth chain plus
    isotropic Gaussian noise; the reported robot pose is the commanded pose
    left-perturbed by a random twist. Observations that noise pushes outside
    the image are dropped; fewer than MIN_VISIBLE_MARKERS remaining is an
    error. Deterministic given the rng seed.
    """
    rng = np.random.default_rng(rng)
    twist = np.concatenate(
        [
            rng.normal(0.0, noise.robot_trans_sigma, 3),
            rng.normal(0.0, noise.robot_rot_sigma, 3),
        ]
    )
    reported_pose = exp_se3(twist) @ ee_from_base
    cam_from_world = cam_from_ee @ ee_from_base @ base_from_world
    pts_cam = cam_from_world.act(board.points)
    if np.any(pts_cam[:, 2] <= _MIN_DEPTH):
        raise BehindCamera("commanded pose places markers behind the camera")
    uv = project(intrinsics, pts_cam)
    uv = uv + rng.normal(0.0, noise.pixel_sigma, uv.shape)

    observations = []
    for marker_id, (u, v) in enumerate(uv):
        if 0.0 <= u < intrinsics.width and 0.0 <= v < intrinsics.height:
            observations.append(PixelObservation(marker_id, float(u), float(v)))
    if len(observations) < MIN_VISIBLE_MARKERS:
        raise MarkerOutOfView(
            f"only {len(observations)} markers remain inside the image"
        )
    return MeasurementSet(reported_pose, tuple(observations))
