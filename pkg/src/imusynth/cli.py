"""Command-line interface.

Subcommands mirror the pipeline stages; every run is reproducible from its
config and seed. Exit codes: 0 success, 2 config error, 3 numerical failure
(including a failed replay check), 4 file/format error.
"""

import argparse
import sys
import tempfile

from .config import load_config
from .errors import ConfigError, FileFormatError, InitializationError, SolverError
from .pipeline import (
    cmd_calibrate,
    cmd_eval,
    cmd_ficacc,
    cmd_fuse,
    cmd_pipeline,
    cmd_synth,
    replay_manifest,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _add_config_args(sub, required=True):
    sub.add_argument("--config", required=required, help="INI config file")
    sub.add_argument("--seed", type=int, default=None, help="override [run] seed")
    sub.add_argument("--out", default=None, help="override [run] out_dir")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="imusynth",
        description="Synthesize raw IMU streams from bone trajectories and "
        "fuse them back into orientations.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="write clean and noisy raw streams")
    _add_config_args(p)
    p.add_argument("--no-noise", action="store_true",
                   help="disable measurement noise and mount sliding")

    p = subs.add_parser("fuse", help="fuse raw streams into orientations")
    _add_config_args(p)
    p.add_argument("--kind", choices=("noisy", "clean"), default="noisy",
                   help="which synthesized streams to fuse")

    p = subs.add_parser("calibrate", help="solve calibration from the reference window")
    _add_config_args(p)
    p.add_argument("--no-calib-error", action="store_true",
                   help="skip the simulated calibration perturbation")

    p = subs.add_parser("pipeline", help="full chain plus report and manifest")
    _add_config_args(p, required=False)  # replay mode takes the path from the manifest
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--no-calib-error", action="store_true")
    p.add_argument("--manifest", default=None, metavar="MANIFEST_JSON",
                   help="replay a recorded run and verify outputs bitwise")

    p = subs.add_parser("ficacc", help="root-frame kinematics from bone files")
    p.add_argument("root_file", help="root bone CSV")
    p.add_argument("leaf_files", nargs="+", help="leaf bone CSVs")
    p.add_argument("--out", default="ficacc_out", help="output directory")

    p = subs.add_parser("eval", help="spectral similarity of two signal files")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--cutoff", type=float, default=10.0, help="band split [Hz]")
    p.add_argument("--columns", default=None,
                   help="comma-separated channel names (default: all after t)")
    p.add_argument("--window", action=argparse.BooleanOptionalAction, default=True,
                   help="apply a Hann window before the transform")
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _run(args):
    if args.command == "synth":
        files = cmd_synth(_load(args), out_dir=args.out, no_noise=args.no_noise)
        for sensor_id in files:
            print(f"{sensor_id}: clean + noisy streams written")
        return EXIT_OK

    if args.command == "fuse":
        _, failures, backend = cmd_fuse(_load(args), out_dir=args.out, kind=args.kind)
        print(f"fused with {backend} backend")
        for sensor_id in sorted(failures):
            print(f"warning: {sensor_id} failed: {failures[sensor_id]}", file=sys.stderr)
        return EXIT_OK

    if args.command == "calibrate":
        calibs, path = cmd_calibrate(
            _load(args), out_dir=args.out, no_calib_error=args.no_calib_error
        )
        print(f"wrote {path} ({len(calibs)} sensors)")
        return EXIT_OK

    if args.command == "pipeline":
        if args.manifest is not None:
            with tempfile.TemporaryDirectory() as scratch:
                ok, mismatches = replay_manifest(args.manifest, scratch)
            if ok:
                print("replay verified: outputs are bitwise identical")
                return EXIT_OK
            for line in mismatches:
                print(f"replay mismatch: {line}", file=sys.stderr)
            return EXIT_NUMERICAL
        if args.config is None:
            raise ConfigError("pipeline needs --config (or --manifest to replay)")
        cfg = _load(args)
        manifest, report = cmd_pipeline(
            cfg,
            args.config,
            out_dir=args.out,
            no_noise=args.no_noise,
            no_calib_error=args.no_calib_error,
        )
        print(f"mean bone orientation error: {report['mean_bone_error_deg']:.4f} deg")
        for sensor_id in sorted(report["sensors"]):
            print(f"  {sensor_id}: {report['sensors'][sensor_id]:.4f} deg")
        for sensor_id in sorted(report["failures"]):
            print(f"warning: {sensor_id} failed: {report['failures'][sensor_id]}",
                  file=sys.stderr)
        return EXIT_OK

    if args.command == "ficacc":
        written = cmd_ficacc(args.root_file, args.leaf_files, args.out)
        for path in written:
            print(f"wrote {path}")
        return EXIT_OK

    if args.command == "eval":
        columns = args.columns.split(",") if args.columns else None
        _, text = cmd_eval(
            args.file_a, args.file_b, cutoff_hz=args.cutoff,
            window=args.window, columns=columns,
        )
        print(text)
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, InitializationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileFormatError, OSError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
