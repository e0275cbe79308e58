"""Command-line interface: ``radcal calibrate | simulate | evaluate``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io
from .camera import CameraModel
from .config import CalibrationConfig
from .errors import (
    DegenerateConfiguration,
    InfeasibleSpec,
    IntegrityError,
    NoValidSolution,
    NumericalFailure,
    ParseError,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DEGENERATE = 4
EXIT_NO_SOLUTION = 5
EXIT_INFEASIBLE = 6
EXIT_CAMERA_MISMATCH = 7
EXIT_NUMERICAL = 8


class CameraCountMismatch(ValueError):
    pass


def _exit_code(exc):
    if isinstance(exc, (ParseError, IntegrityError)):
        return EXIT_INPUT
    if isinstance(exc, DegenerateConfiguration):
        return EXIT_DEGENERATE
    if isinstance(exc, NoValidSolution):
        return EXIT_NO_SOLUTION
    if isinstance(exc, InfeasibleSpec):
        return EXIT_INFEASIBLE
    if isinstance(exc, CameraCountMismatch):
        return EXIT_CAMERA_MISMATCH
    if isinstance(exc, NumericalFailure):
        return EXIT_NUMERICAL
    return EXIT_INTERNAL


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _fraction(text):
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1), got {text}")
    return value


def _non_negative(text):
    value = float(text)
    if not value >= 0.0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="radcal", description="Multi-camera rig calibration from a sparse map.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="calibrate a rig from a session file")
    p.add_argument("--session", required=True, type=Path)
    p.add_argument("--camera-model", required=True, choices=[m.value for m in CameraModel])
    p.add_argument("--out", required=True, type=Path, help="calibration file to write")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", type=Path, help="JSON file with configuration overrides")
    p.add_argument("--report", type=Path, help="human-readable report to write")
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--stage1-threshold", type=float, default=None, help="radial inlier threshold [px]")
    p.add_argument("--upgrade-threshold", type=float, default=None, help="upgrade inlier threshold [px]")
    p.add_argument("--optimize-points", action="store_true", help="also refine map points in the final stage")
    p.add_argument("--report-timings", action="store_true", help="include stage timings in the --report file")

    p = sub.add_parser("simulate", help="generate a synthetic session with ground truth")
    p.add_argument("--preset", choices=["pentagonal", "helmet"], default="pentagonal")
    p.add_argument("--framesets", type=_positive_int, default=50)
    p.add_argument("--points", type=_positive_int, default=6000)
    p.add_argument("--noise", type=_non_negative, default=0.5, help="pixel noise sigma")
    p.add_argument("--outliers", type=_fraction, default=0.1)
    p.add_argument("--dropout", type=_fraction, default=0.0)
    p.add_argument("--dropout-pattern", choices=["random", "no_complete"], default="random")
    p.add_argument("--max-observations", type=_positive_int, default=100)
    p.add_argument("--start", type=float, default=0.0, help="trajectory start time [s]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--binary", action="store_true", help="write the session in the binary variant")
    p.add_argument("--out", required=True, type=Path, help="output directory")

    p = sub.add_parser("evaluate", help="compare a calibration against a reference")
    p.add_argument("--estimated", required=True, type=Path)
    p.add_argument("--reference", required=True, type=Path)
    p.add_argument("--holdout", type=Path, help="session for reprojection validation")
    p.add_argument("--regime", choices=["indoor", "outdoor"])
    p.add_argument("--map-scale", type=float, default=None, help="metres per map unit (default: holdout's or 1)")
    p.add_argument("--json-out", type=Path)
    return parser


def _load_config(args):
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"{args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ParseError(f"{args.config}: expected a JSON object")
    data["camera_model"] = args.camera_model
    for key, value in (
        ("seed", args.seed),
        ("workers", args.workers),
        ("stage1_threshold", args.stage1_threshold),
        ("upgrade_threshold", args.upgrade_threshold),
    ):
        if value is not None:
            data[key] = value
    if args.optimize_points:
        data["optimize_points"] = True
    try:
        return CalibrationConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid configuration: {exc}") from None


def format_report(result, timings=True):
    d = result.diagnostics
    lines = ["radcal calibration report", ""]
    s1 = d["stage1"]
    lines.append(
        f"stage 1  radial poses: {s1['registered']}/{s1['images']} images registered, "
        f"mean inlier ratio {s1['mean_inlier_ratio']:.4f}"
    )
    s2 = d["stage2"]
    lines.append(
        f"stage 2  rig initialization: {s2.get('trials', 1)} trial(s), seed frameset {s2['seed_frameset']}, "
        f"inlier ratio {s2['inlier_ratio']:.4f}, radial cost {s2['radial_cost']:.6g}"
    )
    if s2.get("dropped_framesets"):
        lines.append(f"         dropped framesets: {s2['dropped_framesets']}")
    s3 = d["stage3"]
    lines.append(
        f"stage 3  radial BA: cost {s3['cost_before']:.6g} -> {s3['final_cost']:.6g} "
        f"({s3['iterations']} iterations, {s3['termination']})"
    )
    lines.append("stage 4  upgrade:")
    for u in d["stage4"]:
        lines.append(f"         camera {u['camera']}: f {u['focal']:.3f} px, t_z {u['t_z']:.6f}, inliers {u['inlier_ratio']:.4f}")
    s5 = d["stage5"]
    lines.append(
        f"stage 5  full BA: cost {s5['cost_before']:.6g} -> {s5['final_cost']:.6g} "
        f"({s5['iterations']} iterations, {s5['termination']}), inlier ratio {s5['inlier_ratio']:.4f}"
    )
    lines.append(f"final reprojection RMS: {d['final_reprojection_rms']:.4f} px")
    lines.append("")
    lines.append("cameras:")
    for i, (cam, ext) in enumerate(zip(result.intrinsics, result.extrinsics)):
        c = ext.center()
        lines.append(
            f"  {i}: {cam.model.value} f={cam.focal:.4f} c=({cam.principal_point[0]:.4f}, {cam.principal_point[1]:.4f}) "
            f"center=({c[0]:.5f}, {c[1]:.5f}, {c[2]:.5f})"
        )
    if d.get("defaults_used"):
        lines.append("")
        lines.append("warnings: engineering defaults in use (no published value):")
        lines.extend(f"  - {text}" for text in d["defaults_used"])
    if timings and result.timings:
        lines.append("")
        lines.append("timings: " + ", ".join(f"{k} {v:.2f}s" for k, v in result.timings.items()))
    return "\n".join(lines) + "\n"


def cmd_calibrate(args):
    from .pipeline import calibrate

    config = _load_config(args)
    session = io.read_session(args.session)
    result = calibrate(session, config)
    io.write_calibration(result, args.out)
    if args.report is not None:
        args.report.write_text(format_report(result, timings=args.report_timings))
    sys.stdout.write(format_report(result))
    return EXIT_OK


def cmd_simulate(args):
    from .synth import NoiseSpec, generate_session

    noise = NoiseSpec(args.noise, args.outliers, args.dropout, args.seed, args.dropout_pattern)
    session, truth = generate_session(
        args.preset, args.framesets, args.points, noise, args.max_observations, start=args.start
    )
    args.out.mkdir(parents=True, exist_ok=True)
    session_path = args.out / ("session.rcb" if args.binary else "session.json")
    io.write_session(session, session_path)
    gt = truth.as_result()
    gt.config = {
        "preset": args.preset,
        "framesets": args.framesets,
        "points": args.points,
        "noise": args.noise,
        "outliers": args.outliers,
        "dropout": args.dropout,
        "dropout_pattern": args.dropout_pattern,
        "max_observations": args.max_observations,
        "start": args.start,
        "seed": args.seed,
    }
    io.write_calibration(gt, args.out / "ground_truth.json")
    io.write_membership(truth.membership, args.out / "membership.json")
    print(f"wrote {session_path} ({session.num_correspondences()} correspondences), ground_truth.json, membership.json")
    return EXIT_OK


def cmd_evaluate(args):
    from .evaluation import classify_calibration, compare_rigs, validate_holdout

    est = io.read_calibration(args.estimated)
    ref = io.read_calibration(args.reference)
    if est.camera_count != ref.camera_count:
        raise CameraCountMismatch(f"estimated has {est.camera_count} cameras, reference has {ref.camera_count}")
    holdout = io.read_session(args.holdout) if args.holdout is not None else None
    scale = args.map_scale if args.map_scale is not None else (holdout.map_scale if holdout is not None else 1.0)
    report = compare_rigs(est, ref, scale)
    doc = report.as_dict()
    if holdout is not None:
        if holdout.camera_count != est.camera_count:
            raise CameraCountMismatch(f"holdout has {holdout.camera_count} cameras, calibration {est.camera_count}")
        val = validate_holdout(est, holdout)
        report.holdout_rms = val.rms
        doc["holdout_rms_px"] = val.rms
        doc["holdout_inlier_ratio"] = val.inlier_ratio
    print(report.format())
    if args.regime is not None:
        verdict = classify_calibration(report, args.regime)
        doc["regime"] = args.regime
        doc["classification"] = verdict.value
        print(f"classification ({args.regime}): {verdict.value}")
    if args.json_out is not None:
        args.json_out.write_text(json.dumps(doc, indent=1) + "\n")
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "simulate": cmd_simulate, "evaluate": cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code = _exit_code(exc)
        stage = getattr(exc, "stage", None)
        label = f" (stage {stage})" if stage is not None else ""
        print(f"radcal {args.command}: error{label}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
