"""Command-line entry points: run, synth, track-eval, eval-ate."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .frames import SequenceError, read_trajectory
from .metrics import NoOverlap, compute_ate

log = logging.getLogger("rgbdi")


def _apply_flags(cfg, args):
    if getattr(args, "no_imu", False):
        cfg.toggles.use_imu = False
    if getattr(args, "no_deformation", False):
        cfg.toggles.use_deformation = False
    if getattr(args, "mesh_out", None):
        cfg.output.mesh = args.mesh_out
    if getattr(args, "report_out", None):
        cfg.output.report = args.report_out
    if getattr(args, "trajectory_out", None):
        cfg.output.trajectory = args.trajectory_out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_run(args) -> int:
    from .pipeline import run

    cfg = _apply_flags(load_config(args.config), args)
    report = run(cfg)
    s = report.summary
    ate = "n/a" if s["ate_rmse"] is None else f"{s['ate_rmse']:.6f}"
    print(f"frames {s['frames']}  AIE {s['aie']:.4f}  ATE {ate}  failed updates {s['failed_updates']}")
    return 0


def cmd_synth(args) -> int:
    from .synthetic import generate_from_config, load_scene_config

    try:
        spec = load_scene_config(args.scene_config)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        seq = generate_from_config(spec, args.out_dir, args.seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{args.scene_config}: {exc}") from exc
    print(f"{len(seq.frames)} frames ({seq.label}) written to {args.out_dir}")
    return 0


def cmd_track_eval(args) -> int:
    from .pipeline import format_aie_table, track_eval

    cfg = _apply_flags(load_config(args.config), args)
    table = track_eval(cfg)
    print(format_aie_table(Path(cfg.sequence.path).name, table))
    return 0


def cmd_eval_ate(args) -> int:
    est_t, est_p = read_trajectory(args.est)
    gt_t, gt_p = read_trajectory(args.gt)
    try:
        print(f"{compute_ate(est_t, est_p, gt_t, gt_p):.6f}")
    except NoOverlap as exc:
        raise SequenceError(str(exc)) from exc
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgbdi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def pipeline_flags(p):
        p.add_argument("config")
        p.add_argument("--no-imu", action="store_true", help="constant-pose prediction with inflated noise")
        p.add_argument("--no-deformation", action="store_true", help="track patches rigidly (direct method)")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="run the full pipeline on a sequence")
    pipeline_flags(p)
    p.add_argument("--mesh-out")
    p.add_argument("--report-out")
    p.add_argument("--trajectory-out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="render a synthetic RGB-D + IMU sequence")
    p.add_argument("scene_config")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track-eval", help="AIE with and without deformation")
    pipeline_flags(p)
    p.set_defaults(func=cmd_track_eval)

    p = sub.add_parser("eval-ate", help="ATE RMSE between two TUM trajectories")
    p.add_argument("est")
    p.add_argument("gt")
    p.set_defaults(func=cmd_eval_ate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SequenceError as exc:
        print(f"sequence error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
