"""Experiment runner and file plumbing.

Subcommands:

- ``make-scene``: write a default experiment config (JSON).
- ``simulate``: run the full multi-policy, multi-seed benchmark from a
  config file; emits per-iteration CSV curves and a JSON summary.
- ``calibrate``: solve a recorded dataset and print the transforms.
- ``nbv-rank``: rank candidate poses of a dataset by information gain.

All outputs are deterministic functions of (config file, seeds): floats are
serialized with shortest round-trip encoding and runs are merged in sorted
key order.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    CalibrationError,
    CandidateInvisible,
    DegenerateConfiguration,
    InvariantViolation,
    ParseError,
    VersionMismatch,
)
from .estimator import (
    CalibrationParams,
    closed_form_init,
    optimize,
    solve_pnp,
)
from .evaluation import (
    evaluate_params,
    pearson_correlation,
    policy_max_distance,
    policy_random,
    reprojection_rmse_per_obs,
)
from .geom import Pose, quat_from_rotation, rotation_from_quat
from .infogain import (
    NbvConfig,
    draw_initial_views,
    info_state,
    predict_information_gain,
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
    Workcell,
    generate_candidates,
    make_board,
    sample_viewpoints,
)

DATASET_VERSION = 1
CONFIG_VERSION = 1

CSV_COLUMNS = [
    "policy",
    "seed",
    "iteration",
    "entropy_nats",
    "predicted_ig_nats",
    "e_at_mm",
    "e_aR_deg",
    "e_rt_mm",
    "e_rR_deg",
    "e_rmse_px",
]

POLICY_NAMES = ("nbv", "random", "max_distance")


# --- JSON helpers ------------------------------------------------------------


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ParseError(f"missing field '{path}.{key}'")
    return mapping[key]


def pose_to_json(pose: Pose) -> dict:
    return {
        "quat_wxyz": [float(v) for v in quat_from_rotation(pose.rotation)],
        "translation_m": [float(v) for v in pose.translation],
    }


def pose_from_json(value: dict, path: str) -> Pose:
    quat = np.asarray(_require(value, "quat_wxyz", path), dtype=float)
    translation = np.asarray(_require(value, "translation_m", path), dtype=float)
    if quat.shape != (4,) or translation.shape != (3,):
        raise ParseError(f"{path}: quaternion must be length 4, translation length 3")
    norm = float(np.linalg.norm(quat))
    if abs(norm - 1.0) > 1e-6:
        raise InvariantViolation(f"{path}: quaternion norm {norm!r} is not unit")
    return Pose(rotation_from_quat(quat / norm), translation)


def _load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc


def _dump_json(document: dict, path) -> None:
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")


# --- experiment config -------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one benchmark needs: scene, candidates, loop, protocol."""

    board_rows: int
    board_cols: int
    board_spacing: float
    intrinsics: CameraIntrinsics
    cam_from_ee: Pose
    base_from_world: Pose
    noise: NoiseModel
    geometry: CandidateGeometry
    nbv: NbvConfig
    policies: tuple[str, ...]
    seeds: tuple[int, ...]
    validation_views: int = 10
    ig_scatter_seeds: int = 1
    ig_scatter_draws: int = 1

    def __post_init__(self):
        if not self.policies:
            raise InvariantViolation("at least one policy is required")
        if not self.seeds:
            raise InvariantViolation("at least one seed is required")
        if self.validation_views < 2:
            raise InvariantViolation("validation set needs at least 2 views")
        for name in self.policies:
            if name not in POLICY_NAMES:
                raise ParseError(f"unknown policy '{name}' (choices: {POLICY_NAMES})")

    def workcell(self) -> Workcell:
        return Workcell(
            self.cam_from_ee,
            self.base_from_world,
            make_board(self.board_rows, self.board_cols, self.board_spacing),
            self.intrinsics,
            self.noise,
        )


def default_config_document() -> dict:
    """Default synthetic workcell: 4x4 board at 30 mm pitch, 1.3 MP camera,
    half-degree-of-noise-free industrial arm."""
    cam_from_ee = Pose(
        rotation_from_quat([0.9990482, 0.0261769, -0.0209424, 0.0313653]),
        [0.035, -0.05, 0.09],
    )
    base_from_world = Pose(
        rotation_from_quat([0.9921977, 0.0148950, -0.0099300, 0.1235538]),
        [0.5, -0.1, 0.2],
    )
    return {
        "version": CONFIG_VERSION,
        "scene": {
            "board": {"rows": 4, "cols": 4, "spacing_m": 0.03},
            "intrinsics": {
                "fx": 1100.0,
                "fy": 1100.0,
                "cx": 640.0,
                "cy": 512.0,
                "width": 1280,
                "height": 1024,
            },
            "cam_from_ee": pose_to_json(cam_from_ee),
            "base_from_world": pose_to_json(base_from_world),
            "noise": {
                "pixel_sigma_px": 0.5,
                "robot_rot_sigma_rad": float(np.deg2rad(0.01)),
                "robot_trans_sigma_m": 1e-4,
            },
        },
        "candidates": {
            "radius_min_m": 0.45,
            "radius_max_m": 0.60,
            "n_radii": 2,
            "n_azimuths": 8,
            "elevation_min_deg": 40.0,
            "elevation_max_deg": 65.0,
            "n_elevations": 3,
        },
        "nbv": {
            "initial_views": 3,
            "max_added_views": 5,
            "gain_threshold_nats": 0.0,
            "exclude_visited": False,
        },
        "policies": list(POLICY_NAMES),
        "seeds": list(range(20)),
        "validation_views": 10,
        "ig_scatter_seeds": 1,
        "ig_scatter_draws": 3,
    }


def parse_config_document(document: dict) -> ExperimentConfig:
    version = _require(document, "version", "config")
    if version != CONFIG_VERSION:
        raise VersionMismatch(f"unsupported config version {version!r}")
    scene = _require(document, "scene", "config")
    board = _require(scene, "board", "scene")
    intr = _require(scene, "intrinsics", "scene")
    noise = _require(scene, "noise", "scene")
    cand = _require(document, "candidates", "config")
    nbv = _require(document, "nbv", "config")

    intrinsics = CameraIntrinsics(
        fx=float(_require(intr, "fx", "intrinsics")),
        fy=float(_require(intr, "fy", "intrinsics")),
        cx=float(_require(intr, "cx", "intrinsics")),
        cy=float(_require(intr, "cy", "intrinsics")),
        width=int(_require(intr, "width", "intrinsics")),
        height=int(_require(intr, "height", "intrinsics")),
    )
    geometry = CandidateGeometry(
        radius_min=float(_require(cand, "radius_min_m", "candidates")),
        radius_max=float(_require(cand, "radius_max_m", "candidates")),
        n_radii=int(_require(cand, "n_radii", "candidates")),
        n_azimuths=int(_require(cand, "n_azimuths", "candidates")),
        elevation_min=float(np.deg2rad(_require(cand, "elevation_min_deg", "candidates"))),
        elevation_max=float(np.deg2rad(_require(cand, "elevation_max_deg", "candidates"))),
        n_elevations=int(_require(cand, "n_elevations", "candidates")),
    )
    nbv_config = NbvConfig(
        initial_views=int(_require(nbv, "initial_views", "nbv")),
        max_added_views=int(_require(nbv, "max_added_views", "nbv")),
        gain_threshold=float(_require(nbv, "gain_threshold_nats", "nbv")),
        exclude_visited=bool(nbv.get("exclude_visited", False)),
    )
    return ExperimentConfig(
        board_rows=int(_require(board, "rows", "board")),
        board_cols=int(_require(board, "cols", "board")),
        board_spacing=float(_require(board, "spacing_m", "board")),
        intrinsics=intrinsics,
        cam_from_ee=pose_from_json(_require(scene, "cam_from_ee", "scene"), "scene.cam_from_ee"),
        base_from_world=pose_from_json(
            _require(scene, "base_from_world", "scene"), "scene.base_from_world"
        ),
        noise=NoiseModel(
            pixel_sigma=float(_require(noise, "pixel_sigma_px", "noise")),
            robot_rot_sigma=float(_require(noise, "robot_rot_sigma_rad", "noise")),
            robot_trans_sigma=float(_require(noise, "robot_trans_sigma_m", "noise")),
        ),
        geometry=geometry,
        policies=tuple(_require(document, "policies", "config")),
        seeds=tuple(int(s) for s in _require(document, "seeds", "config")),
        validation_views=int(document.get("validation_views", 10)),
        ig_scatter_seeds=int(document.get("ig_scatter_seeds", 1)),
        ig_scatter_draws=int(document.get("ig_scatter_draws", 1)),
        nbv=nbv_config,
    )


def load_config(path) -> ExperimentConfig:
    return parse_config_document(_load_json(path))


# --- dataset files -----------------------------------------------------------


def save_dataset(path, board, intrinsics: CameraIntrinsics, msets) -> None:
    document = {
        "version": DATASET_VERSION,
        "intrinsics": {
            "fx": intrinsics.fx,
            "fy": intrinsics.fy,
            "cx": intrinsics.cx,
            "cy": intrinsics.cy,
            "width": intrinsics.width,
            "height": intrinsics.height,
        },
        "board": {"rows": board.rows, "cols": board.cols, "spacing_m": board.spacing},
        "measurements": [
            {
                "robot_pose": pose_to_json(mset.robot_pose),
                "observations": [
                    {"marker_id": obs.marker_id, "u": obs.u, "v": obs.v}
                    for obs in mset.observations
                ],
            }
            for mset in msets
        ],
    }
    _dump_json(document, path)


def load_dataset(path):
    """Read a dataset file; returns (board, intrinsics, measurement sets)."""
    document = _load_json(path)
    version = _require(document, "version", "dataset")
    if version != DATASET_VERSION:
        raise VersionMismatch(f"unsupported dataset version {version!r}")
    intr = _require(document, "intrinsics", "dataset")
    board_doc = _require(document, "board", "dataset")
    intrinsics = CameraIntrinsics(
        fx=float(_require(intr, "fx", "intrinsics")),
        fy=float(_require(intr, "fy", "intrinsics")),
        cx=float(_require(intr, "cx", "intrinsics")),
        cy=float(_require(intr, "cy", "intrinsics")),
        width=int(_require(intr, "width", "intrinsics")),
        height=int(_require(intr, "height", "intrinsics")),
    )
    board = make_board(
        int(_require(board_doc, "rows", "board")),
        int(_require(board_doc, "cols", "board")),
        float(_require(board_doc, "spacing_m", "board")),
    )
    msets = []
    for k, entry in enumerate(_require(document, "measurements", "dataset")):
        pose = pose_from_json(
            _require(entry, "robot_pose", f"measurements[{k}]"), f"measurements[{k}].robot_pose"
        )
        observations = []
        for j, obs in enumerate(_require(entry, "observations", f"measurements[{k}]")):
            marker_id = int(_require(obs, "marker_id", f"measurements[{k}].observations[{j}]"))
            if marker_id < 0 or marker_id >= len(board):
                raise InvariantViolation(
                    f"measurements[{k}]: marker id {marker_id} invalid for this board"
                )
            observations.append(
                PixelObservation(
                    marker_id,
                    float(_require(obs, "u", f"measurements[{k}].observations[{j}]")),
                    float(_require(obs, "v", f"measurements[{k}].observations[{j}]")),
                )
            )
        msets.append(MeasurementSet(pose, tuple(observations)))
    return board, intrinsics, msets


def save_candidates(path, poses) -> None:
    _dump_json(
        {"version": DATASET_VERSION, "poses": [pose_to_json(p) for p in poses]}, path
    )


def load_candidates(path) -> CandidateSet:
    document = _load_json(path)
    version = _require(document, "version", "candidates")
    if version != DATASET_VERSION:
        raise VersionMismatch(f"unsupported candidates version {version!r}")
    poses = [
        pose_from_json(entry, f"poses[{k}]")
        for k, entry in enumerate(_require(document, "poses", "candidates"))
    ]
    return CandidateSet(tuple(poses))


# --- experiment orchestration ------------------------------------------------


def _policy_callable(name: str, candidates: CandidateSet):
    if name == "nbv":
        return None
    if name == "random":
        return lambda visited, poses, rng: policy_random(candidates, visited, rng)
    if name == "max_distance":
        return lambda visited, poses, rng: policy_max_distance(candidates, visited, poses)
    raise ParseError(f"unknown policy '{name}'")


def _seed_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def ig_rmse_scatter(
    workcell: Workcell,
    candidates: CandidateSet,
    initial_msets,
    initial_params: CalibrationParams,
    validation_msets,
    seed: int,
    draws: int = 1,
) -> list[tuple[float, float]]:
    """(predicted gain, realized validation-RMSE reduction) per candidate.

    From the post-initialization state, each candidate is scored, then a
    real (noisy) measurement is collected there and the model re-optimized;
    the pair records how well the prediction anticipated the outcome. With
    ``draws`` > 1 the outcome is the mean over that many independent
    collections at the pose. Candidates whose refit cannot be evaluated on
    the validation set are skipped.
    """
    board, intrinsics = workcell.board, workcell.intrinsics
    base = optimize(initial_params, list(initial_msets), board, intrinsics)
    state = info_state(base.params, list(initial_msets), board, intrinsics)
    rmse_before = reprojection_rmse_per_obs(base.params, validation_msets, board, intrinsics)

    pairs = []
    for index in range(len(candidates)):
        try:
            score = predict_information_gain(
                base.params, None, candidates[index], board, intrinsics,
                state=state, index=index,
            )
        except CandidateInvisible:
            continue
        reductions = []
        for draw in range(draws):
            mset = workcell.measure(candidates[index], _seed_rng(seed, 2, index, draw))
            refined = optimize(
                base.params, list(initial_msets) + [mset], board, intrinsics
            )
            try:
                rmse_after = reprojection_rmse_per_obs(
                    refined.params, validation_msets, board, intrinsics
                )
            except CalibrationError:
                continue
            reductions.append(rmse_before - rmse_after)
        if reductions:
            pairs.append((score.information_gain, float(np.mean(reductions))))
    return pairs


def run_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Run every (policy, seed) episode and write iterations.csv + summary.json.

    All policies share the same initial views and validation set for a given
    seed. Validation viewpoints are sampled off-grid, so they are disjoint
    from the candidate set. Returns the summary document.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workcell = config.workcell()
    candidates = generate_candidates(config.geometry, workcell)
    truth = CalibrationParams(workcell.cam_from_ee, workcell.base_from_world)
    board, intrinsics = workcell.board, workcell.intrinsics

    rows = []
    scatter_pairs: list[tuple[float, float]] = []
    for seed_index, seed in enumerate(config.seeds):
        rng_shared = _seed_rng(seed, 0)
        validation_poses = sample_viewpoints(
            config.geometry, workcell, config.validation_views, rng_shared
        )
        validation_msets = [workcell.measure(p, rng_shared) for p in validation_poses]
        validation_cam_poses = []
        for mset in validation_msets:
            try:
                validation_cam_poses.append(solve_pnp(board, mset.observations, intrinsics))
            except DegenerateConfiguration:
                validation_cam_poses.append(None)
        initial_poses, initial_msets, initial_params = draw_initial_views(
            workcell,
            candidates,
            config.nbv.initial_views,
            rng_shared,
            config.nbv.init_rot_jitter,
            config.nbv.init_trans_jitter,
        )

        def evaluate(params):
            try:
                return evaluate_params(
                    params, truth, validation_msets, validation_cam_poses, board, intrinsics
                ).as_dict()
            except CalibrationError:
                # A diverged refit cannot be scored; leave the metric cells empty.
                return {}

        for policy_index, policy_name in enumerate(config.policies):
            run = run_active_calibration(
                workcell,
                candidates,
                config.nbv,
                _seed_rng(seed, 1, policy_index),
                initial_poses=initial_poses,
                initial_msets=initial_msets,
                initial_params=initial_params,
                policy=_policy_callable(policy_name, candidates),
                policy_name=policy_name,
                evaluate=evaluate,
            )
            for record in run.records:
                rows.append(
                    {
                        "policy": policy_name,
                        "seed": seed,
                        "iteration": record.iteration,
                        "entropy_nats": record.entropy,
                        "predicted_ig_nats": record.predicted_ig,
                        **record.metrics,
                    }
                )

        if "nbv" in config.policies and seed_index < config.ig_scatter_seeds:
            scatter_pairs.extend(
                ig_rmse_scatter(
                    workcell, candidates, initial_msets, initial_params,
                    validation_msets, seed, draws=config.ig_scatter_draws,
                )
            )

    rows.sort(key=lambda row: (row["policy"], row["seed"], row["iteration"]))
    _write_rows_csv(out_dir / "iterations.csv", rows)
    summary = _summarize(config, rows, scatter_pairs)
    _dump_json(summary, out_dir / "summary.json")
    return summary


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows_csv(path, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row.get(col)) for col in CSV_COLUMNS])


def _mean_std(values) -> dict:
    data = np.array([v for v in values if v is not None], dtype=float)
    if data.size == 0:
        return {"mean": None, "std": None}
    std = float(np.std(data, ddof=1)) if data.size > 1 else 0.0
    return {"mean": float(np.mean(data)), "std": std}


def _summarize(config: ExperimentConfig, rows, scatter_pairs) -> dict:
    metric_keys = [
        "entropy_nats",
        "predicted_ig_nats",
        "e_at_mm",
        "e_aR_deg",
        "e_rt_mm",
        "e_rR_deg",
        "e_rmse_px",
        "e_rmse_frame_px",
    ]
    per_iteration: dict = {}
    for policy in config.policies:
        policy_rows = [r for r in rows if r["policy"] == policy]
        iterations = sorted({r["iteration"] for r in policy_rows})
        per_iteration[policy] = [
            {
                "iteration": iteration,
                **{
                    key: _mean_std(
                        r.get(key) for r in policy_rows if r["iteration"] == iteration
                    )
                    for key in metric_keys
                },
            }
            for iteration in iterations
        ]
    summary = {
        "version": CONFIG_VERSION,
        "policies": list(config.policies),
        "seeds": list(config.seeds),
        "per_iteration": per_iteration,
    }
    if scatter_pairs:
        gains = [p[0] for p in scatter_pairs]
        reductions = [p[1] for p in scatter_pairs]
        summary["ig_rmse_scatter"] = {
            "pairs": [[float(g), float(r)] for g, r in scatter_pairs],
            "pearson_r": pearson_correlation(gains, reductions),
            "n": len(scatter_pairs),
        }
    return summary


# --- subcommands -------------------------------------------------------------


def _cmd_make_scene(args) -> int:
    document = default_config_document()
    if args.out:
        _dump_json(document, args.out)
    else:
        print(json.dumps(document, indent=2, sort_keys=True))
    return 0


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.policy:
        for name in args.policy:
            if name not in config.policies:
                raise ParseError(f"policy '{name}' not present in the config")
        config = _replace_config(config, policies=tuple(args.policy))
    if args.seed:
        config = _replace_config(config, seeds=tuple(args.seed))
    run_experiment(config, args.out_dir)
    return 0


def _replace_config(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    return replace(config, **overrides)


def _fit_dataset(path):
    board, intrinsics, msets = load_dataset(path)
    cam_poses = [solve_pnp(board, m.observations, intrinsics) for m in msets]
    init = closed_form_init(cam_poses, [m.robot_pose for m in msets])
    report = optimize(init, msets, board, intrinsics)
    return board, intrinsics, msets, report


def _cmd_calibrate(args) -> int:
    board, intrinsics, msets, report = _fit_dataset(args.dataset)
    state = info_state(report.params, msets, board, intrinsics)
    rmse = reprojection_rmse_per_obs(report.params, msets, board, intrinsics)
    print("cam_from_ee:", json.dumps(pose_to_json(report.params.cam_from_ee), sort_keys=True))
    print(
        "base_from_world:",
        json.dumps(pose_to_json(report.params.base_from_world), sort_keys=True),
    )
    print(f"views: {len(msets)}")
    print(f"final_cost_px2: {report.final_cost!r}")
    print(f"train_rmse_px: {rmse!r}")
    print(f"entropy_nats: {state.entropy!r}")
    print(f"converged: {report.converged} ({report.reason})")
    return 0


def _cmd_nbv_rank(args) -> int:
    board, intrinsics, msets, report = _fit_dataset(args.dataset)
    candidates = load_candidates(args.candidates)
    state = info_state(report.params, msets, board, intrinsics)
    _, scores = select_nbv(
        report.params, msets, candidates, board, intrinsics, state=state
    )
    scores = sorted(scores, key=lambda s: (-s.information_gain, s.index))
    print("index,ig_nats,entropy_before_nats,entropy_after_nats")
    for score in scores:
        print(
            f"{score.index},{score.information_gain!r},"
            f"{state.entropy!r},{score.predicted_entropy!r}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activecalib",
        description="Active robot eye-in-hand calibration experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scene", help="write a default experiment config")
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.set_defaults(func=_cmd_make_scene)

    p = sub.add_parser("simulate", help="run the benchmark described by a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--policy", action="append", help="restrict to a policy (repeatable)")
    p.add_argument("--seed", action="append", type=int, help="override seeds (repeatable)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="solve a dataset and print the transforms")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("nbv-rank", help="rank candidate poses by information gain")
    p.add_argument("--dataset", required=True)
    p.add_argument("--candidates", required=True)
    p.set_defaults(func=_cmd_nbv_rank)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
