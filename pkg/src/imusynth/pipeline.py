"""Pipeline stages wiring trajectories through synthesis, fusion, and
calibration, plus the deterministic run manifest.

Stage outputs are pure functions of (input files, config, seed): per-stream
generators are seeded as (global_seed, sensor_index, stage_code), nothing
reads the clock, and the manifest records content hashes of every output so
a replay can be checked bitwise.

The fictitious-acceleration and feature stages use the ground-truth bone
kinematics for positions and velocities (an IMU cannot observe them) while
the relative orientation comes from the calibrated fused estimates, matching
what a downstream pose estimator would consume.
"""

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (
    _mean_rotation,
    bone_orientation,
    perturb_calibration,
    simulate_tpose_calibration,
)
from .dynamics import corrected_leaf_acceleration, fictitious_acceleration, root_frame_quantities
from .errors import ConfigError, InitializationError, SolverError
from .fileio import (
    read_bone_csv,
    read_fused_csv,
    read_raw_csv,
    read_signal_csv,
    write_bone_est_csv,
    write_calibration_ini,
    write_ficacc_csv,
    write_fused_csv,
    write_raw_csv,
    write_features_csv,
)
from .fusion import fuse_stream
from .metrics import SpectrumBands, orientation_error_series, spectral_cosine_similarity
from .noise import add_noise
from .so3 import matrix_to_quat, quat_to_matrix
from .synthesis import synthesize_stream
from .trajectory import ideal_sensor_trajectory, perturbed_sensor_trajectory

__all__ = [
    "cmd_synth",
    "cmd_fuse",
    "cmd_calibrate",
    "cmd_pipeline",
    "cmd_ficacc",
    "cmd_eval",
    "replay_manifest",
    "stream_seeds",
]

STAGE_SLIDING = 0
STAGE_NOISE = 1
STAGE_CALIB = 2

# reference window for the simulated T-pose: first 0.5 s of the sequence
REFERENCE_SECONDS = 0.5


def stream_seeds(global_seed, sensor_index):
    """Independent derived seeds, one per randomized stage of one stream."""
    return {
        "sliding": [global_seed, sensor_index, STAGE_SLIDING],
        "noise": [global_seed, sensor_index, STAGE_NOISE],
        "calibration": [global_seed, sensor_index, STAGE_CALIB],
    }


def _load_bones(cfg):
    bones = {}
    for spec in cfg.sensors:
        bones[spec.sensor_id] = read_bone_csv(spec.bone_file)
    rates = {b.frame_rate for b in bones.values()}
    lengths = {len(b) for b in bones.values()}
    if len(rates) > 1 or len(lengths) > 1:
        raise ConfigError(
            f"bone files disagree: frame rates {sorted(rates)}, lengths {sorted(lengths)}"
        )
    return bones


def _solver_cfgs(cfg, frame_rate):
    dt = 1.0 / (frame_rate * cfg.substeps)
    accel = dataclasses.replace(cfg.accel, substeps=cfg.substeps, dt=dt)
    gyro = dataclasses.replace(cfg.gyro, substeps=cfg.substeps, dt=dt)
    return accel, gyro


def _raw_paths(out, sensor_id, kind):
    return (
        out / "raw" / f"{sensor_id}_{kind}_inertial.csv",
        out / "raw" / f"{sensor_id}_{kind}_mag.csv",
    )


def cmd_synth(cfg, out_dir=None, no_noise=False):
    """Synthesize clean and noisy raw streams for every configured sensor.

    Returns {sensor_id: {"clean": (inertial, mag), "noisy": (inertial, mag)}}.
    With noise disabled (config or flag) the noisy files repeat the clean
    stream so downstream stages always read the same file names.
    """
    cfg.require_sensors()
    bones = _load_bones(cfg)
    out = Path(out_dir or cfg.out_dir)
    (out / "raw").mkdir(parents=True, exist_ok=True)
    sliding_on = cfg.sliding_enabled and not no_noise
    noise_on = cfg.noise_enabled and not no_noise

    files = {}
    for idx, spec in enumerate(cfg.sensors):
        track = bones[spec.sensor_id]
        accel_cfg, gyro_cfg = _solver_cfgs(cfg, track.frame_rate)
        seeds = stream_seeds(cfg.seed, idx)
        if sliding_on:
            sliding = dataclasses.replace(cfg.sliding, seed=seeds["sliding"])
            traj = perturbed_sensor_trajectory(track, spec.mount, sliding)
        else:
            traj = ideal_sensor_trajectory(track, spec.mount)
        try:
            clean = synthesize_stream(traj, accel_cfg, gyro_cfg)
        except SolverError as exc:
            raise SolverError(f"sensor {spec.sensor_id!r}, synthesis stage: {exc}") from exc
        noisy = clean
        if noise_on:
            noisy, _ = add_noise(
                clean, dataclasses.replace(cfg.noise, seed=seeds["noise"])
            )
        entry = {}
        for kind, stream in (("clean", clean), ("noisy", noisy)):
            inertial, mag = _raw_paths(out, spec.sensor_id, kind)
            write_raw_csv(inertial, mag, stream)
            entry[kind] = (inertial, mag)
        files[spec.sensor_id] = entry
    return files


def cmd_fuse(cfg, out_dir=None, backend="auto", kind="noisy"):
    """Fuse each sensor's raw stream back into orientations.

    A sensor whose filter initialization fails is reported and skipped;
    the others continue. Returns (fused paths, failures, backend used).
    """
    cfg.require_sensors()
    out = Path(out_dir or cfg.out_dir)
    (out / "fused").mkdir(parents=True, exist_ok=True)
    fused_paths = {}
    failures = {}
    backend_used = None
    for spec in cfg.sensors:
        inertial, mag = _raw_paths(out, spec.sensor_id, kind)
        stream = read_raw_csv(inertial, mag)
        try:
            result = fuse_stream(stream, cfg.eskf, backend=backend)
        except InitializationError as exc:
            failures[spec.sensor_id] = str(exc)
            continue
        backend_used = result.backend
        path = out / "fused" / f"{spec.sensor_id}.csv"
        write_fused_csv(path, result.quaternions, stream.sample_rate)
        fused_paths[spec.sensor_id] = path
    if not fused_paths:
        raise InitializationError(
            "all sensors failed to initialize: "
            + "; ".join(f"{k}: {v}" for k, v in sorted(failures.items()))
        )
    return fused_paths, failures, backend_used


def _reference_window(cfg, bones, fused):
    """Per-sensor (R_IS stack, R_WB mean) over the first REFERENCE_SECONDS."""
    sensor_ref = {}
    bone_ref = {}
    for sensor_id, (quats, rate) in fused.items():
        k_fused = max(1, int(round(REFERENCE_SECONDS * rate)))
        sensor_ref[sensor_id] = quat_to_matrix(quats[:k_fused])
        track = bones[sensor_id]
        k_bone = max(1, int(round(REFERENCE_SECONDS * track.frame_rate)))
        bone_ref[sensor_id] = _mean_rotation(track.rotations[:k_bone])
    return sensor_ref, bone_ref


def cmd_calibrate(cfg, out_dir=None, no_calib_error=False):
    """Estimate per-sensor calibration from the simulated T-pose window."""
    cfg.require_sensors()
    out = Path(out_dir or cfg.out_dir)
    bones = _load_bones(cfg)
    fused = {}
    for spec in cfg.sensors:
        path = out / "fused" / f"{spec.sensor_id}.csv"
        if path.exists():
            fused[spec.sensor_id] = read_fused_csv(path)
    if cfg.root_sensor not in fused:
        raise ConfigError(f"no fused stream for root sensor {cfg.root_sensor!r}")
    sensor_ref, bone_ref = _reference_window(cfg, bones, fused)
    calibs = simulate_tpose_calibration(
        sensor_ref, bone_ref, cfg.root_sensor, np.radians(cfg.heading_deg)
    )
    if cfg.calib_enabled and not no_calib_error:
        for idx, spec in enumerate(cfg.sensors):
            if spec.sensor_id not in calibs:
                continue
            params = dataclasses.replace(
                cfg.calib_error, seed=stream_seeds(cfg.seed, idx)["calibration"]
            )
            calibs[spec.sensor_id] = perturb_calibration(calibs[spec.sensor_id], params)
    path = out / "calibration.ini"
    write_calibration_ini(path, calibs)
    return calibs, path


def _keyframe_indices(track, sample_rate):
    """Fused-sample index of each keyframe covered by the stream."""
    ratio = int(round(sample_rate / track.frame_rate))
    return np.arange(len(track) - 1) * ratio


def _write_report(path, lines):
    path.write_text("\n".join(lines) + "\n")


def cmd_pipeline(
    cfg,
    config_path,
    out_dir=None,
    no_noise=False,
    no_calib_error=False,
    backend="auto",
):
    """Full chain: synth, fuse, calibrate, bone estimates, leaf features.

    Writes everything under the output directory and finishes with
    manifest.json recording seeds, flags, and a content hash per output.
    Returns (manifest dict, report dict).
    """
    cfg.require_sensors()
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cmd_synth(cfg, out, no_noise=no_noise)
    fused_paths, failures, backend_used = cmd_fuse(cfg, out, backend=backend)
    if cfg.root_sensor not in fused_paths:
        raise InitializationError(
            f"root sensor {cfg.root_sensor!r} failed to initialize: "
            + failures.get(cfg.root_sensor, "missing")
        )
    calibs, _ = cmd_calibrate(cfg, out, no_calib_error=no_calib_error)

    bones = _load_bones(cfg)
    (out / "bones_est").mkdir(exist_ok=True)
    report = {"sensors": {}, "failures": failures}
    est_bone_quats = {}
    for spec in cfg.sensors:
        if spec.sensor_id not in fused_paths:
            continue
        quats, rate = read_fused_csv(fused_paths[spec.sensor_id])
        est = bone_orientation(quat_to_matrix(quats), calibs[spec.sensor_id])
        est_q = matrix_to_quat(est)
        est_bone_quats[spec.sensor_id] = (est_q, rate)
        write_bone_est_csv(out / "bones_est" / f"{spec.sensor_id}.csv", est_q, rate)
        track = bones[spec.sensor_id]
        keys = _keyframe_indices(track, rate)
        _, mean_err = orientation_error_series(est[keys], track.rotations[: len(keys)])
        report["sensors"][spec.sensor_id] = mean_err
    report["mean_bone_error_deg"] = float(np.mean(list(report["sensors"].values())))

    (out / "ficacc").mkdir(exist_ok=True)
    (out / "features").mkdir(exist_ok=True)
    root_track = bones[cfg.root_sensor]
    for spec in cfg.sensors:
        if spec.sensor_id == cfg.root_sensor or spec.sensor_id not in est_bone_quats:
            continue
        leaf_track = bones[spec.sensor_id]
        dyn, leaf = root_frame_quantities(root_track, leaf_track)
        afic = fictitious_acceleration(dyn, leaf.p_rl, leaf.pdot_rl)
        pddot = corrected_leaf_acceleration(dyn, leaf)
        write_ficacc_csv(
            out / "ficacc" / f"{spec.sensor_id}.csv", root_track.times, afic, pddot
        )
        # relative orientation from the calibrated estimates, kinematics
        # from ground truth; both at the keyframe rate
        root_q, rate = est_bone_quats[cfg.root_sensor]
        leaf_q, _ = est_bone_quats[spec.sensor_id]
        keys = _keyframe_indices(root_track, rate)
        r_root = quat_to_matrix(root_q[keys])
        r_leaf = quat_to_matrix(leaf_q[keys])
        rel = matrix_to_quat(np.swapaxes(r_root, -1, -2) @ r_leaf)
        write_features_csv(
            out / "features" / f"{spec.sensor_id}.csv",
            root_track.times[: len(keys)],
            rel,
            pddot[: len(keys)],
        )

    lines = [f"pipeline report (package {__version__})"]
    lines.append(f"mean bone orientation error: {report['mean_bone_error_deg']:.4f} deg")
    for sensor_id in sorted(report["sensors"]):
        lines.append(f"  {sensor_id}: {report['sensors'][sensor_id]:.4f} deg")
    for sensor_id in sorted(failures):
        lines.append(f"  {sensor_id}: FAILED ({failures[sensor_id]})")
    _write_report(out / "report.txt", lines)

    manifest = _build_manifest(
        cfg, config_path, out, backend_used, no_noise, no_calib_error
    )
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest, report


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _build_manifest(cfg, config_path, out, backend_used, no_noise, no_calib_error):
    outputs = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            outputs[str(path.relative_to(out))] = _sha256(path)
    return {
        "package_version": __version__,
        "config_path": str(Path(config_path).resolve()),
        "config_sha256": _sha256(config_path),
        "seed": cfg.seed,
        "no_noise": bool(no_noise),
        "no_calib_error": bool(no_calib_error),
        "backend": backend_used,
        "stream_seeds": {
            spec.sensor_id: stream_seeds(cfg.seed, idx)
            for idx, spec in enumerate(cfg.sensors)
        },
        "outputs": outputs,
    }


def replay_manifest(manifest_path, scratch_dir):
    """Re-run a recorded pipeline and compare output hashes.

    Returns (ok, mismatches). The config file must be unchanged since the
    recorded run; the recorded backend is forced so float ops are identical.
    """
    from .config import load_config

    with open(manifest_path) as fh:
        manifest = json.load(fh)
    config_path = manifest["config_path"]
    if _sha256(config_path) != manifest["config_sha256"]:
        raise ConfigError(f"config file {config_path} changed since the recorded run")
    cfg = load_config(config_path)
    cfg.seed = manifest["seed"]
    cmd_pipeline(
        cfg,
        config_path,
        out_dir=scratch_dir,
        no_noise=manifest["no_noise"],
        no_calib_error=manifest["no_calib_error"],
        backend=manifest["backend"],
    )
    scratch = Path(scratch_dir)
    mismatches = []
    for rel, digest in sorted(manifest["outputs"].items()):
        replayed = scratch / rel
        if not replayed.is_file():
            mismatches.append(f"{rel}: missing")
        elif _sha256(replayed) != digest:
            mismatches.append(f"{rel}: hash differs")
    return not mismatches, mismatches


def cmd_ficacc(root_file, leaf_files, out_dir):
    """Root-frame kinematics straight from bone files, one CSV per leaf."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root_track = read_bone_csv(root_file)
    written = []
    for leaf_file in leaf_files:
        leaf_path = Path(leaf_file)
        leaf_track = read_bone_csv(leaf_path)
        dyn, leaf = root_frame_quantities(root_track, leaf_track)
        afic = fictitious_acceleration(dyn, leaf.p_rl, leaf.pdot_rl)
        pddot = corrected_leaf_acceleration(dyn, leaf)
        path = out / f"{leaf_path.stem}_ficacc.csv"
        write_ficacc_csv(path, root_track.times, afic, pddot)
        written.append(path)
    return written


def cmd_eval(path_a, path_b, cutoff_hz=10.0, window=True, columns=None):
    """Spectral similarity between two signal files; returns (report, text)."""
    t_a, sig_a, names = read_signal_csv(path_a, columns)
    t_b, sig_b, _ = read_signal_csv(path_b, columns)
    if sig_a.shape != sig_b.shape:
        raise ConfigError(f"signal shapes differ: {sig_a.shape} vs {sig_b.shape}")
    dt_a = t_a[1] - t_a[0]
    dt_b = t_b[1] - t_b[0]
    if abs(dt_a - dt_b) > 1e-9:
        raise ConfigError(f"sample intervals differ: {dt_a:.6g} vs {dt_b:.6g}")
    bands = SpectrumBands(sample_rate=1.0 / dt_a, cutoff_hz=cutoff_hz)
    report = spectral_cosine_similarity(sig_a, sig_b, bands, window=window)
    text = "\n".join(
        [
            f"channels: {', '.join(names)}",
            f"samples: {sig_a.shape[0]} at {1.0 / dt_a:.6g} Hz, cutoff {cutoff_hz:g} Hz",
            f"low band:  {report.low_band:+.6f}",
            f"high band: {report.high_band:+.6f}",
            f"full band: {report.full_band:+.6f}",
        ]
    )
    return report, text
