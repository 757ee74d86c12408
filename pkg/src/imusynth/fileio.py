"""CSV and structured-text I/O for trajectories, streams, and calibrations.

Every writer emits a '#' comment line declaring units and frame conventions,
then a plain CSV header row. Floats are %.17g so values round-trip exactly.
Quaternions are stored (w, x, y, z); readers renormalize when the norm is
within 1% of unity and reject the file otherwise.

Sample rates are inferred from the time column and snapped to an integer Hz
when within 1e-6 relative, since 1/180 is not exactly representable.
"""

import configparser

import numpy as np

from .calibration import CalibrationMatrices
from .errors import FileFormatError
from .so3 import matrix_to_quat, quat_to_matrix
from .synthesis import RawImuStream
from .trajectory import BonePoseSequence

__all__ = [
    "read_bone_csv",
    "write_bone_csv",
    "read_raw_csv",
    "write_raw_csv",
    "read_fused_csv",
    "write_fused_csv",
    "write_bone_est_csv",
    "write_ficacc_csv",
    "write_features_csv",
    "read_signal_csv",
    "read_calibration_ini",
    "write_calibration_ini",
]

BONE_HEADER = ["frame", "t", "px", "py", "pz", "qw", "qx", "qy", "qz"]
INERTIAL_HEADER = ["idx", "t", "ax", "ay", "az", "gx", "gy", "gz"]
MAG_HEADER = ["idx", "t", "mx", "my", "mz"]
FUSED_HEADER = ["idx", "t", "qw", "qx", "qy", "qz"]
FICACC_HEADER = ["t", "afic_x", "afic_y", "afic_z", "pddot_x", "pddot_y", "pddot_z"]
FEATURES_HEADER = ["t", "qw", "qx", "qy", "qz", "ax", "ay", "az"]


def _fmt_row(values):
    return ",".join("%.17g" % v for v in values)


def _write_table(path, comment, header, data):
    with open(path, "w") as fh:
        fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(data):
            fh.write(_fmt_row(row) + "\n")


def _read_table(path, expected_header):
    comments = []
    rows = []
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                comments.append(s[1:].strip())
            else:
                rows.append(s)
    if not rows:
        raise FileFormatError(f"{path}: no header row")
    header = [h.strip() for h in rows[0].split(",")]
    if header != expected_header:
        raise FileFormatError(
            f"{path}: header {header} does not match expected {expected_header}"
        )
    data = np.empty((len(rows) - 1, len(expected_header)))
    for i, row in enumerate(rows[1:]):
        parts = row.split(",")
        if len(parts) != len(expected_header):
            raise FileFormatError(f"{path}: row {i + 1} has {len(parts)} fields")
        try:
            data[i] = [float(p) for p in parts]
        except ValueError:
            raise FileFormatError(f"{path}: non-numeric value in row {i + 1}") from None
    return data, comments


def _rate_from_times(t, path):
    if t.shape[0] < 2:
        raise FileFormatError(f"{path}: need at least 2 rows to infer a rate")
    dt = np.diff(t)
    if np.abs(dt - dt[0]).max() > 1e-9 or dt[0] <= 0.0:
        raise FileFormatError(f"{path}: time column is not uniformly increasing")
    rate = 1.0 / dt[0]
    snapped = round(rate)
    if snapped >= 1 and abs(rate - snapped) < 1e-6 * snapped:
        return float(snapped)
    return rate


def _quat_gate(q, path):
    norms = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(norms - 1.0) > 0.01):
        worst = norms[np.abs(norms - 1.0).argmax()]
        raise FileFormatError(f"{path}: quaternion norm {worst:.4f} outside [0.99, 1.01]")
    return q / norms[..., None]


def read_bone_csv(path):
    data, _ = _read_table(path, BONE_HEADER)
    if data.shape[0] < 2:
        raise FileFormatError(f"{path}: need at least 2 frames")
    rate = _rate_from_times(data[:, 1], path)
    rotations = quat_to_matrix(_quat_gate(data[:, 5:9], path))
    return BonePoseSequence(rate, data[:, 2:5], rotations)


def write_bone_csv(path, bones):
    quats = matrix_to_quat(bones.rotations)
    data = np.column_stack([np.arange(len(bones)), bones.times, bones.positions, quats])
    _write_table(
        path,
        "bone pose: world frame z-up; t [s]; p [m]; quaternion (w,x,y,z) bone-to-world",
        BONE_HEADER,
        data,
    )


def write_raw_csv(inertial_path, mag_path, stream):
    g = stream.gravity
    comment = (
        "raw IMU: sensor frame; t [s]; specific force a [m/s^2]; "
        f"body rate g [rad/s]; gravity_w={g[0]:.17g} {g[1]:.17g} {g[2]:.17g}"
    )
    n = stream.accel.shape[0]
    data = np.column_stack([np.arange(n), stream.times, stream.accel, stream.gyro])
    _write_table(inertial_path, comment, INERTIAL_HEADER, data)
    m = stream.mag.shape[0]
    mag_data = np.column_stack([np.arange(m), stream.mag_times, stream.mag])
    _write_table(
        mag_path, "magnetometer: unit field direction, sensor frame; t [s]", MAG_HEADER, mag_data
    )


def _gravity_from_comments(comments, path):
    for c in comments:
        if "gravity_w=" in c:
            try:
                return np.array([float(x) for x in c.split("gravity_w=")[1].split()[:3]])
            except (ValueError, IndexError):
                raise FileFormatError(f"{path}: malformed gravity_w header") from None
    return None


def read_raw_csv(inertial_path, mag_path):
    data, comments = _read_table(inertial_path, INERTIAL_HEADER)
    mag_data, _ = _read_table(mag_path, MAG_HEADER)
    rate = _rate_from_times(data[:, 1], inertial_path)
    key_rate = _rate_from_times(mag_data[:, 1], mag_path)
    gravity = _gravity_from_comments(comments, inertial_path)
    kwargs = {} if gravity is None else {"gravity": gravity}
    return RawImuStream(
        accel=data[:, 2:5],
        gyro=data[:, 5:8],
        mag=mag_data[:, 2:5],
        sample_rate=rate,
        keyframe_rate=key_rate,
        **kwargs,
    )


def write_fused_csv(path, quaternions, sample_rate):
    quats = np.asarray(quaternions, dtype=float)
    n = quats.shape[0]
    t = np.arange(n) / sample_rate
    _write_table(
        path,
        "fused orientation: sensor-to-inertial quaternion (w,x,y,z); t [s]",
        FUSED_HEADER,
        np.column_stack([np.arange(n), t, quats]),
    )


def read_fused_csv(path):
    data, _ = _read_table(path, FUSED_HEADER)
    rate = _rate_from_times(data[:, 1], path)
    return _quat_gate(data[:, 2:6], path), rate


def write_bone_est_csv(path, quaternions, sample_rate):
    """Estimated bone orientations; same columns as the fused format."""
    quats = np.asarray(quaternions, dtype=float)
    n = quats.shape[0]
    _write_table(
        path,
        "estimated bone orientation: bone-to-world quaternion (w,x,y,z); t [s]",
        FUSED_HEADER,
        np.column_stack([np.arange(n), np.arange(n) / sample_rate, quats]),
    )


def write_ficacc_csv(path, times, afic, pddot):
    _write_table(
        path,
        "root-frame leaf kinematics: fictitious acceleration and true "
        "root-frame acceleration [m/s^2]; t [s]",
        FICACC_HEADER,
        np.column_stack([times, afic, pddot]),
    )


def write_features_csv(path, times, quats, accels):
    _write_table(
        path,
        "pose features: leaf-in-root quaternion (w,x,y,z) and corrected "
        "leaf acceleration [m/s^2], root frame; t [s]",
        FEATURES_HEADER,
        np.column_stack([times, quats, accels]),
    )


def read_signal_csv(path, columns=None):
    """Generic reader for any table written here: (times, values, names).

    columns selects named channels; the default takes every column after 't'
    except bookkeeping counters (idx/frame).
    """
    comments = []
    rows = []
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            (comments if s.startswith("#") else rows).append(s)
    if len(rows) < 2:
        raise FileFormatError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0].split(",")]
    if "t" not in header:
        raise FileFormatError(f"{path}: no 't' column in header {header}")
    if columns is None:
        start = header.index("t") + 1
        columns = [h for h in header[start:] if h not in ("idx", "frame")]
    missing = [c for c in columns if c not in header]
    if missing:
        raise FileFormatError(f"{path}: columns {missing} not in header {header}")
    data, _ = _read_table(path, header)
    t = data[:, header.index("t")]
    values = data[:, [header.index(c) for c in columns]]
    return t, values, list(columns)


def write_calibration_ini(path, calibrations):
    """Two quaternions (r_iw, r_bs) per sensor id, one section each."""
    parser = configparser.ConfigParser()
    for sensor_id in sorted(calibrations):
        calib = calibrations[sensor_id]
        parser[sensor_id] = {
            "r_iw": _fmt_row(matrix_to_quat(calib.r_iw)),
            "r_bs": _fmt_row(matrix_to_quat(calib.r_bs)),
        }
    with open(path, "w") as fh:
        fh.write("# calibration: quaternions (w,x,y,z); r_iw inertial-to-world, "
                 "r_bs bone-to-sensor\n")
        parser.write(fh)


def _quat_from_text(text, path):
    try:
        vals = np.array([float(x) for x in text.replace(",", " ").split()])
    except ValueError:
        raise FileFormatError(f"{path}: malformed quaternion {text!r}") from None
    if vals.shape != (4,):
        raise FileFormatError(f"{path}: quaternion needs 4 components, got {vals.shape[0]}")
    return quat_to_matrix(_quat_gate(vals, path))


def read_calibration_ini(path):
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileFormatError(f"{path}: unreadable calibration file")
    out = {}
    for sensor_id in parser.sections():
        section = parser[sensor_id]
        if set(section) != {"r_iw", "r_bs"}:
            raise FileFormatError(
                f"{path}: section [{sensor_id}] must have exactly r_iw and r_bs"
            )
        out[sensor_id] = CalibrationMatrices(
            r_iw=_quat_from_text(section["r_iw"], path),
            r_bs=_quat_from_text(section["r_bs"], path),
        )
    return out
