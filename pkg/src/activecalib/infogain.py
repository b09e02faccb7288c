"""Uncertainty quantification and next-best-view selection.

The information matrix of the calibration parameters is the Gauss-Newton
Hessian J^T J of the stacked reprojection residuals (first-order Fisher
information). Its inverse is the parameter covariance; differential entropy
of the implied 12-dimensional Gaussian is the scalar uncertainty measure.
A candidate viewpoint is scored by predicting its Jacobian block at the
current estimate (no measurement needed) and evaluating the entropy drop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    CandidateInvisible,
    DegenerateConfiguration,
    DegenerateMotion,
    MarkerOutOfView,
    NoEvaluableCandidates,
    SingularInformation,
    SingularSystem,
)
from .estimator import (
    CalibrationParams,
    SolveReport,
    SolverConfig,
    closed_form_init,
    jacobian_block,
    optimize,
    solve_pnp,
)
from .geom import Pose, exp_se3
from .sensing import (
    MIN_VISIBLE_MARKERS,
    CandidateSet,
    MeasurementSet,
    PixelObservation,
    Workcell,
    project,
)

_DIM = 12
_MAX_CONDITION = 1e12
_LOG_2PIE = math.log(2.0 * math.pi) + 1.0


@dataclass(frozen=True, eq=False)
class InfoState:
    """Information matrix, covariance, and entropy of the parameters given
    the collected measurement sets."""

    information: np.ndarray  # (12, 12)
    covariance: np.ndarray   # (12, 12)
    entropy: float           # nats
    n_views: int


@dataclass(frozen=True)
class CandidateScore:
    index: int
    predicted_entropy: float   # nats
    information_gain: float    # nats, current entropy - predicted entropy


@dataclass(frozen=True)
class NbvConfig:
    """Knobs of the active calibration loop.

    The initial views mimic a manual initialization: one starting pose plus
    small jogs of the arm around it (the jitter magnitudes below), which
    leaves the parameters identifiable but genuinely uncertain.
    """

    initial_views: int = 3
    max_added_views: int = 5
    gain_threshold: float = 0.0     # nats; stop when best gain falls below
    eval_budget: int | None = None  # max candidates scored per iteration
    exclude_visited: bool = False
    entropy_pixel_sigma: float = 1.0
    init_rot_jitter: float = 0.06   # rad, spread of the initial jog rotations
    init_trans_jitter: float = 0.03  # m

    def __post_init__(self):
        if self.initial_views < 3:
            raise ValueError("at least 3 initial views are required")
        if self.gain_threshold < 0:
            raise ValueError("gain threshold must be non-negative")


def entropy_from_information(information: np.ndarray, pixel_sigma: float = 1.0) -> float:
    """Differential entropy (nats) of N(0, sigma^2 * information^-1).

    Uses the Cholesky log-determinant; never forms the raw determinant.
    """
    if np.linalg.cond(information) > _MAX_CONDITION:
        raise SingularInformation("information matrix condition number above 1e12")
    try:
        chol = np.linalg.cholesky(information)
    except np.linalg.LinAlgError as exc:
        raise SingularInformation("information matrix not positive definite") from exc
    n = information.shape[0]
    logdet_information = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return 0.5 * n * _LOG_2PIE + n * math.log(pixel_sigma) - 0.5 * logdet_information


def fim_covariance(jacobian: np.ndarray, pixel_sigma: float = 1.0):
    """Covariance (inverse Fisher information) and entropy from a stacked Jacobian.

    Raises SingularInformation when J^T J has rank < 12 or condition number
    above 1e12 (unidentifiable parameters: too few or degenerate views).
    """
    information = jacobian.T @ jacobian
    entropy = entropy_from_information(information, pixel_sigma)
    chol = np.linalg.cholesky(information)
    chol_inv = np.linalg.inv(chol)
    covariance = pixel_sigma**2 * (chol_inv.T @ chol_inv)
    return covariance, entropy


def info_state(
    params: CalibrationParams,
    msets: list[MeasurementSet],
    board,
    intrinsics,
    pixel_sigma: float = 1.0,
) -> InfoState:
    """Accumulate the 12x12 information over measurement sets at the estimate."""
    information = np.zeros((_DIM, _DIM))
    for mset in msets:
        block = jacobian_block(params, mset, board, intrinsics).stacked()
        information += block.T @ block
    entropy = entropy_from_information(information, pixel_sigma)
    chol = np.linalg.cholesky(information)
    chol_inv = np.linalg.inv(chol)
    covariance = pixel_sigma**2 * (chol_inv.T @ chol_inv)
    return InfoState(information, covariance, entropy, len(msets))


def predicted_measurement(
    params: CalibrationParams,
    candidate: Pose,
    board,
    intrinsics,
) -> MeasurementSet:
    """Noise-free measurement the current estimate expects from a candidate pose.

    Markers predicted outside the image (or behind the camera) are excluded;
    fewer than MIN_VISIBLE_MARKERS visible raises CandidateInvisible.
    """
    cam_from_world = params.cam_from_ee @ candidate @ params.base_from_world
    pts_cam = cam_from_world.act(board.points)
    observations = []
    for marker_id, pt in enumerate(pts_cam):
        if pt[2] <= 1e-9:
            continue
        u, v = project(intrinsics, pt)
        if 0.0 <= u < intrinsics.width and 0.0 <= v < intrinsics.height:
            observations.append(PixelObservation(marker_id, float(u), float(v)))
    if len(observations) < MIN_VISIBLE_MARKERS:
        raise CandidateInvisible(
            f"only {len(observations)} markers predicted visible"
        )
    return MeasurementSet(candidate, tuple(observations))


def predict_information_gain(
    params: CalibrationParams,
    msets: list[MeasurementSet] | None,
    candidate: Pose,
    board,
    intrinsics,
    state: InfoState | None = None,
    index: int = 0,
    pixel_sigma: float = 1.0,
) -> CandidateScore:
    """Entropy reduction expected from adding one measurement at ``candidate``.

    The candidate's Jacobian block is evaluated at the current estimate using
    the predicted (noise-free) projections, before any robot motion. The
    constant entropy offset from pixel_sigma cancels in the gain.
    """
    if state is None:
        if msets is None:
            raise ValueError("either collected measurement sets or a state is required")
        state = info_state(params, msets, board, intrinsics, pixel_sigma)
    predicted = predicted_measurement(params, candidate, board, intrinsics)
    block = jacobian_block(params, predicted, board, intrinsics).stacked()
    predicted_entropy = entropy_from_information(
        state.information + block.T @ block, pixel_sigma
    )
    return CandidateScore(index, predicted_entropy, state.entropy - predicted_entropy)


def select_nbv(
    params: CalibrationParams,
    msets: list[MeasurementSet] | None,
    candidates: CandidateSet,
    board,
    intrinsics,
    state: InfoState | None = None,
    eligible=None,
    eval_budget: int | None = None,
    pixel_sigma: float = 1.0,
):
    """Argmax of predicted information gain over the candidate set.

    Returns (best index, scores for every evaluable candidate). Ties break
    to the lowest candidate index. Candidates where too few markers are
    predicted visible are skipped.
    """
    if state is None:
        if msets is None:
            raise ValueError("either collected measurement sets or a state is required")
        state = info_state(params, msets, board, intrinsics, pixel_sigma)
    indices = range(len(candidates)) if eligible is None else sorted(eligible)
    if eval_budget is not None:
        indices = list(indices)[:eval_budget]

    scores: list[CandidateScore] = []
    best: CandidateScore | None = None
    for index in indices:
        try:
            score = predict_information_gain(
                params,
                None,
                candidates[index],
                board,
                intrinsics,
                state=state,
                index=index,
                pixel_sigma=pixel_sigma,
            )
        except CandidateInvisible:
            continue
        scores.append(score)
        if best is None or score.information_gain > best.information_gain:
            best = score
    if best is None:
        raise NoEvaluableCandidates("no candidate could be scored")
    return best.index, scores


@dataclass(frozen=True)
class IterationRecord:
    """State after the optimization at one loop iteration."""

    iteration: int                 # 0 = after initialization
    n_views: int
    entropy: float                 # nats, at the current estimate
    cost: float                    # px^2, final optimizer cost
    predicted_ig: float | None     # nats, for the view chosen this iteration
    chosen_index: int | None
    chosen_pose: Pose | None
    metrics: dict | None = None


@dataclass(frozen=True)
class CalibrationRun:
    """Full record of one active-calibration episode."""

    policy: str
    records: tuple[IterationRecord, ...]
    params: CalibrationParams
    final_report: SolveReport
    termination: str               # "budget" | "gain_threshold"
    initial_poses: tuple[Pose, ...]
    measurement_count: int


def draw_initial_views(
    workcell: Workcell,
    candidates: CandidateSet,
    n_views: int,
    rng,
    rot_jitter: float = 0.06,
    trans_jitter: float = 0.03,
    max_tries: int = 50,
):
    """Sample an initial view pattern: one candidate pose plus small jogs.

    Mirrors a manual initialization where the arm is nudged between the
    first captures; the resulting parameters are identifiable but still
    uncertain, which is the regime the active loop is for. Returns
    (poses, measurement sets, linear initial estimate).

    Retries the draw when the closed-form initializer reports degenerate
    motion, a measurement loses too many markers, or the refined estimate
    leaves the information matrix close to singular (conditioning is
    checked with a 100x margin so downstream entropies stay well-posed).
    """
    rng = np.random.default_rng(rng)
    last_error: Exception | None = None
    for _ in range(max_tries):
        start = candidates[int(rng.integers(len(candidates)))]
        poses = [start]
        for _ in range(n_views - 1):
            twist = np.concatenate(
                [
                    rng.normal(0.0, trans_jitter, 3),
                    rng.normal(0.0, rot_jitter, 3),
                ]
            )
            poses.append(exp_se3(twist) @ start)
        try:
            msets = [workcell.measure(pose, rng) for pose in poses]
            cams = [solve_pnp(workcell.board, m.observations, workcell.intrinsics) for m in msets]
            params = closed_form_init(cams, [m.robot_pose for m in msets])
            refined = optimize(params, msets, workcell.board, workcell.intrinsics)
            state = info_state(refined.params, msets, workcell.board, workcell.intrinsics)
            if np.linalg.cond(state.information) > _MAX_CONDITION / 100.0:
                raise SingularInformation("initial views close to degenerate")
        except (
            DegenerateMotion,
            DegenerateConfiguration,
            SingularInformation,
            SingularSystem,
            MarkerOutOfView,
            BehindCamera,
        ) as exc:
            last_error = exc
            continue
        return tuple(poses), msets, params
    raise SingularInformation(
        f"no usable initial view set after {max_tries} draws"
    ) from last_error


def run_active_calibration(
    workcell: Workcell,
    candidates: CandidateSet,
    config: NbvConfig = NbvConfig(),
    rng=None,
    *,
    initial_poses=None,
    initial_msets=None,
    initial_params=None,
    policy=None,
    policy_name: str = "nbv",
    evaluate=None,
    solver_config: SolverConfig = SolverConfig(),
) -> CalibrationRun:
    """Greedy active calibration loop.

    One episode: linear initialization from the starting views, nonlinear
    refinement, then repeatedly score candidates, move (virtually) to the
    chosen one, collect a simulated measurement, and re-optimize from the
    previous estimate (the linear initializer runs once). Stops when the
    view budget is exhausted or, for the information-gain policy, when the
    best predicted gain falls below the configured threshold.

    ``policy`` is None for next-best-view selection, or a callable
    ``(visited_indices, visited_poses, rng) -> index`` implementing a
    baseline. ``evaluate`` is an optional callable ``(params) -> dict``
    whose output is attached to each iteration record.
    """
    rng = np.random.default_rng(rng)

    if initial_poses is None:
        initial_poses, initial_msets, init_params = draw_initial_views(
            workcell,
            candidates,
            config.initial_views,
            rng,
            config.init_rot_jitter,
            config.init_trans_jitter,
        )
    else:
        initial_poses = tuple(initial_poses)
        if initial_msets is None:
            initial_msets = [workcell.measure(pose, rng) for pose in initial_poses]
        if initial_params is None:
            cams = [
                solve_pnp(workcell.board, m.observations, workcell.intrinsics)
                for m in initial_msets
            ]
            init_params = closed_form_init(cams, [m.robot_pose for m in initial_msets])
        else:
            init_params = initial_params

    board, intrinsics = workcell.board, workcell.intrinsics
    msets = list(initial_msets)
    report = optimize(init_params, msets, board, intrinsics, solver_config)
    params = report.params
    state = info_state(params, msets, board, intrinsics, config.entropy_pixel_sigma)

    visited_indices: list[int] = []
    visited_poses: list[Pose] = list(initial_poses)
    records = [
        IterationRecord(
            0,
            len(msets),
            state.entropy,
            report.final_cost,
            None,
            None,
            None,
            evaluate(params) if evaluate else None,
        )
    ]

    termination = "budget"
    for iteration in range(1, config.max_added_views + 1):
        eligible = None
        if config.exclude_visited:
            eligible = [i for i in range(len(candidates)) if i not in set(visited_indices)]

        if policy is None:
            chosen, scores = select_nbv(
                params,
                None,
                candidates,
                board,
                intrinsics,
                state=state,
                eligible=eligible,
                eval_budget=config.eval_budget,
                pixel_sigma=config.entropy_pixel_sigma,
            )
            best = next(s for s in scores if s.index == chosen)
            if best.information_gain < config.gain_threshold:
                termination = "gain_threshold"
                break
            predicted_ig = best.information_gain
        else:
            chosen = int(policy(tuple(visited_indices), tuple(visited_poses), rng))
            try:
                predicted_ig = predict_information_gain(
                    params,
                    None,
                    candidates[chosen],
                    board,
                    intrinsics,
                    state=state,
                    index=chosen,
                    pixel_sigma=config.entropy_pixel_sigma,
                ).information_gain
            except CandidateInvisible:
                predicted_ig = float("nan")

        mset = workcell.measure(candidates[chosen], rng)
        msets.append(mset)
        visited_indices.append(chosen)
        visited_poses.append(candidates[chosen])
        report = optimize(params, msets, board, intrinsics, solver_config)
        params = report.params
        state = info_state(params, msets, board, intrinsics, config.entropy_pixel_sigma)
        records.append(
            IterationRecord(
                iteration,
                len(msets),
                state.entropy,
                report.final_cost,
                predicted_ig,
                chosen,
                candidates[chosen],
                evaluate(params) if evaluate else None,
            )
        )

    return CalibrationRun(
        policy_name,
        tuple(records),
        params,
        report,
        termination,
        initial_poses,
        len(msets),
    )
