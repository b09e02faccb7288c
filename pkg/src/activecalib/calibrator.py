"""Scikit-learn style front end for the calibration pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import CandidateInvisible
from .estimator import (
    CalibrationParams,
    SolverConfig,
    closed_form_init,
    optimize,
    residuals,
    solve_pnp,
)
from .geom import Pose
from .infogain import InfoState, info_state, predict_information_gain, predicted_measurement
from .sensing import MeasurementSet, project
from .validation import (
    check_board,
    check_intrinsics,
    check_measurement_sets,
    check_poses,
)


class HandEyeCalibrator(BaseEstimator):
    """Estimate the end-effector-to-camera and world-to-base transforms.

    Fits on a sequence of :class:`MeasurementSet` (robot pose + pixel
    detections of board markers). Unless ``initial_params`` is given, the
    initial estimate comes from per-frame PnP followed by the linear
    closed-form solver; Levenberg-Marquardt then minimizes the summed squared
    reprojection error.

    Attributes set by fit: ``params_`` (the two transforms), ``report_``
    (solver trace), ``information_``, ``covariance_``, ``entropy_``,
    ``n_views_``.
    """

    def __init__(
        self,
        board=None,
        intrinsics=None,
        initial_params=None,
        pixel_sigma=1.0,
        max_iterations=50,
        cost_abs_tol=1e-18,
        cost_rel_tol=1e-12,
        step_tol=1e-12,
        init_damping=1e-4,
        damping_factor=10.0,
    ):
        self.board = board
        self.intrinsics = intrinsics
        self.initial_params = initial_params
        self.pixel_sigma = pixel_sigma
        self.max_iterations = max_iterations
        self.cost_abs_tol = cost_abs_tol
        self.cost_rel_tol = cost_rel_tol
        self.step_tol = step_tol
        self.init_damping = init_damping
        self.damping_factor = damping_factor

    def _solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_iterations=self.max_iterations,
            cost_abs_tol=self.cost_abs_tol,
            cost_rel_tol=self.cost_rel_tol,
            step_tol=self.step_tol,
            init_damping=self.init_damping,
            damping_factor=self.damping_factor,
        )

    def fit(self, X, y=None):
        """Calibrate from measurement sets. Returns self."""
        board = check_board(self.board)
        intrinsics = check_intrinsics(self.intrinsics)
        msets = check_measurement_sets(X, board, min_sets=3)

        if self.initial_params is None:
            cam_poses = [solve_pnp(board, m.observations, intrinsics) for m in msets]
            init = closed_form_init(cam_poses, [m.robot_pose for m in msets])
        else:
            init = self.initial_params

        self.report_ = optimize(init, msets, board, intrinsics, self._solver_config())
        self.params_ = self.report_.params
        state = info_state(self.params_, msets, board, intrinsics, self.pixel_sigma)
        self.information_ = state.information
        self.covariance_ = state.covariance
        self.entropy_ = state.entropy
        self.n_views_ = len(msets)
        return self

    def predict(self, X):
        """Predicted pixel positions for measurement sets or robot poses.

        For MeasurementSet inputs, predicts at that set's observed marker
        ids; for Pose inputs, predicts the full board. Returns a list of
        (m, 2) arrays.
        """
        check_is_fitted(self, "params_")
        board = check_board(self.board)
        intrinsics = check_intrinsics(self.intrinsics)
        out = []
        for item in X:
            if isinstance(item, MeasurementSet):
                robot_pose = item.robot_pose
                pts = board.points[item.marker_ids()]
            else:
                robot_pose = item
                pts = board.points
            cam_from_world = (
                self.params_.cam_from_ee @ robot_pose @ self.params_.base_from_world
            )
            out.append(project(intrinsics, cam_from_world.act(pts)))
        return out

    def score(self, X, y=None):
        """Negative mean squared reprojection error (px^2); higher is better."""
        check_is_fitted(self, "params_")
        board = check_board(self.board)
        intrinsics = check_intrinsics(self.intrinsics)
        msets = check_measurement_sets(X, board)
        total, count = 0.0, 0
        for mset in msets:
            r = residuals(self.params_, mset, board, intrinsics).values
            total += float(r @ r)
            count += len(r) // 2
        return -total / count

    def information_gain(self, candidate_poses) -> np.ndarray:
        """Predicted entropy reduction (nats) for each candidate robot pose.

        Candidates from which too few markers would be visible score NaN.
        """
        check_is_fitted(self, "params_")
        board = check_board(self.board)
        intrinsics = check_intrinsics(self.intrinsics)
        poses = check_poses(candidate_poses, "candidate_poses")
        state = InfoState(self.information_, self.covariance_, self.entropy_, self.n_views_)
        gains = np.full(len(poses), np.nan)
        for k, pose in enumerate(poses):
            try:
                gains[k] = predict_information_gain(
                    self.params_,
                    None,
                    pose,
                    board,
                    intrinsics,
                    state=state,
                    index=k,
                    pixel_sigma=self.pixel_sigma,
                ).information_gain
            except CandidateInvisible:
                pass
        return gains

    def predicted_view(self, candidate_pose: Pose) -> MeasurementSet:
        """Noise-free measurement the fitted model expects from a pose."""
        check_is_fitted(self, "params_")
        return predicted_measurement(
            self.params_, candidate_pose, check_board(self.board), check_intrinsics(self.intrinsics)
        )
