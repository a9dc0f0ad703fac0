"""Command-line entry points: build-scene, run-matrix, localize-once.

Exit codes: 0 success (localize-once: pose accepted), 1 localization failed,
2 input/configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiment
from .experiment import ConfigError, load_config
from .fusion import Scan, read_fused_csv
from .geometry import RigidTransform
from .model import ModelError
from .registration import result_record
from .sensor_sim import read_density_pgm, read_scan_csv


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--delta", type=float, help="binary density threshold")
    parser.add_argument("--delta-prime", type=float, help="linear weighting threshold")
    parser.add_argument("--tau-trans", type=float, help="rejection threshold, meters")
    parser.add_argument("--tau-rot", type=float, help="rejection threshold, radians")


def _overrides(args: argparse.Namespace) -> dict:
    mapping = {
        "seed": args.seed,
        "out_dir": args.out,
        "delta": args.delta,
        "delta_prime": args.delta_prime,
        "tau_trans": args.tau_trans,
        "tau_rot": args.tau_rot,
    }
    return {k: v for k, v in mapping.items() if v is not None}


def _load_init_pose(path: str) -> RigidTransform:
    doc = json.loads(Path(path).read_text())
    if "r" in doc and "t" in doc:
        import numpy as np

        return RigidTransform(np.array(doc["r"]).reshape(3, 3), doc["t"])
    return experiment._pose_from_obj(doc, path)


def cmd_build_scene(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    paths = experiment.build_scene_files(cfg)
    for line in experiment.scene_inventory(cfg):
        print(line)
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_run_matrix(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    csv_path, jsonl_path = experiment.run_matrix(cfg)
    print(f"wrote {csv_path}")
    print(f"wrote {jsonl_path}")
    return 0


def cmd_localize_once(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    scan_path = Path(args.scan)
    if scan_path.suffix == ".csv" and args.fused:
        scan = read_fused_csv(scan_path)
    else:
        scan = Scan.from_raw(read_scan_csv(scan_path))
    images = [read_density_pgm(p) for p in args.image or []]
    init = _load_init_pose(args.init_pose) if args.init_pose else cfg.initial_pose
    result = experiment.localize_once(
        cfg, scan, images, init, (args.icp, args.scan_variant)
    )
    print(json.dumps(result_record(result, args.icp, args.scan_variant), indent=2))
    return 0 if result.localized else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planloc",
        description="Selective weighted point-to-plane localization in building models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build-scene", help="extrude and write scene meshes")
    _add_common(p_build)
    p_build.set_defaults(func=cmd_build_scene)

    p_run = sub.add_parser("run-matrix", help="evaluate all six method combinations")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run_matrix)

    p_once = sub.add_parser("localize-once", help="localize one scan file")
    _add_common(p_once)
    p_once.add_argument("--scan", required=True, help="scan CSV (x,y,z,class)")
    p_once.add_argument(
        "--fused", action="store_true", help="scan CSV already carries densities (x,y,z,d,w)"
    )
    p_once.add_argument(
        "--image", action="append", help="density PGM, one per rig camera, in rig order"
    )
    p_once.add_argument("--init-pose", help="JSON pose file ({r,t} or translation/yaw_deg)")
    p_once.add_argument("--icp", choices=("full", "selective"), default="selective")
    p_once.add_argument(
        "--scan-variant", choices=("full", "filtered", "weighted"), default="filtered"
    )
    p_once.set_defaults(func=cmd_localize_once)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelError, OSError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
