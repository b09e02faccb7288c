"""Active robot eye-in-hand calibration.

Estimates the end-effector-to-camera and world-to-base transforms from
pixel observations of a planar target, quantifies their uncertainty through
the Fisher information of the reprojection residuals, and greedily selects
the next robot viewpoint by predicted information gain.
"""

from .calibrator import HandEyeCalibrator
from .errors import (
    AngleAtPi,
    BadDimensions,
    BehindCamera,
    CalibrationError,
    CandidateInvisible,
    CandidatesExhausted,
    DegenerateConfiguration,
    DegenerateInput,
    DegenerateMotion,
    EmptyCandidateSet,
    InsufficientFrames,
    InvariantViolation,
    MarkerOutOfView,
    NoEvaluableCandidates,
    ParseError,
    SingularInformation,
    SingularSystem,
    UnknownMarker,
    VersionMismatch,
)
from .estimator import (
    CalibrationParams,
    JacobianBlock,
    NormalSystem,
    ResidualBlock,
    SolveReport,
    SolverConfig,
    assemble,
    closed_form_init,
    jacobian_block,
    left_error_twist,
    optimize,
    residuals,
    solve_pnp,
)
from .evaluation import (
    MetricsRecord,
    absolute_errors,
    end_effector_position,
    evaluate_params,
    pearson_correlation,
    policy_max_distance,
    policy_random,
    relative_errors,
    reprojection_rmse,
    reprojection_rmse_per_obs,
)
from .geom import Pose, exp_se3, log_se3, rotation_angle, quat_from_rotation, rotation_from_quat
from .infogain import (
    CalibrationRun,
    CandidateScore,
    InfoState,
    IterationRecord,
    NbvConfig,
    draw_initial_views,
    entropy_from_information,
    fim_covariance,
    info_state,
    predict_information_gain,
    predicted_measurement,
    run_active_calibration,
    select_nbv,
)
from .sensing import (
    CameraIntrinsics,
    CandidateGeometry,
    CandidateSet,
    MeasurementSet,
    NoiseModel,
    PixelObservation,
    TargetBoard,
    Workcell,
    generate_candidates,
    make_board,
    project,
    project_jacobian,
    sample_viewpoints,
    simulate_measurement,
)

__version__ = "0.1.0"
