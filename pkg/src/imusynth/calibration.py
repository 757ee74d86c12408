"""Sensor-to-bone alignment and simulated calibration error.

Two alignment matrices relate the filter output to bone orientations: R_IW,
the filter's world frame expressed in the mocap world, and R_BS, the sensor
mount in the bone frame. Bone orientation is R_WB = R_IW^T R_IS R_BS^T.

Calibration error is modeled by right-multiplying (local frame) each matrix
once per sequence with a random rotation: axis uniform on the sphere, angle
half-normal with the configured mean. In practice both matrices come from a
T-pose: the subject stands in a known reference pose facing a configured
heading, R_IW is read off the root sensor, and each R_BS is solved so the
reference pose is reproduced exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .so3 import check_rotation, exp_so3, geodesic_angle


@dataclass
class CalibrationMatrices:
    r_iw: np.ndarray
    r_bs: np.ndarray

    def __post_init__(self):
        self.r_iw = np.asarray(self.r_iw, dtype=float)
        self.r_bs = np.asarray(self.r_bs, dtype=float)
        check_rotation(self.r_iw)
        check_rotation(self.r_bs)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.eye(3))


@dataclass(frozen=True)
class CalibrationErrorParams:
    iw_angle_mean: float = 0.01
    bs_angle_mean: float = 0.1
    seed: object = 0

    def __post_init__(self):
        if self.iw_angle_mean < 0.0 or self.bs_angle_mean < 0.0:
            raise ValueError("perturbation angle means must be non-negative")


def bone_orientation(r_is, calib: CalibrationMatrices):
    """R_WB = R_IW^T R_IS R_BS^T; r_is may be a single matrix or a stack."""
    r_is = np.asarray(r_is, dtype=float)
    return calib.r_iw.T @ r_is @ calib.r_bs.T


def _random_rotation_half_normal(rng, angle_mean):
    """Rotation with uniform axis and half-normal angle of the given mean.

    Draw order (two calls per rotation): 3 normals for the axis, then one
    normal for the angle. Deterministic per generator state.
    """
    axis = rng.normal(size=3)
    norm = np.linalg.norm(axis)
    while norm < 1e-12:
        axis = rng.normal(size=3)
        norm = np.linalg.norm(axis)
    axis /= norm
    # half-normal with E|N(0, sigma)| = sigma * sqrt(2/pi) = angle_mean
    sigma = angle_mean * np.sqrt(np.pi / 2.0)
    angle = abs(rng.normal(0.0, sigma))
    return exp_so3(axis * angle), angle


def perturb_calibration(calib: CalibrationMatrices, params: CalibrationErrorParams) -> CalibrationMatrices:
    """One perturbation per sequence; R_IW drawn first, then R_BS."""
    rng = np.random.default_rng(params.seed)
    d_iw, _ = _random_rotation_half_normal(rng, params.iw_angle_mean)
    d_bs, _ = _random_rotation_half_normal(rng, params.bs_angle_mean)
    return CalibrationMatrices(r_iw=calib.r_iw @ d_iw, r_bs=calib.r_bs @ d_bs)


def _mean_rotation(stack):
    """Chordal mean: averaged matrix projected back to SO(3) by SVD."""
    stack = np.asarray(stack, dtype=float)
    if stack.ndim == 2:
        return stack
    u, _, vt = np.linalg.svd(stack.mean(axis=0))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def simulate_tpose_calibration(sensor_ref, bone_ref, root_sensor, heading=0.0):
    """Solve per-sensor calibration from a reference (T-pose) frame.

    sensor_ref maps sensor id to R_IS at the reference pose (one matrix or a
    stack of frames, averaged), bone_ref maps the same ids to the true R_WB
    at the reference. The root sensor is assumed mounted aligned with the
    root bone, which faces `heading` (radians about world z) during the pose;
    that fixes R_IW, and every R_BS follows by inverting the bone-orientation
    relation so the reference pose is reproduced exactly.
    """
    if root_sensor not in sensor_ref:
        raise ConfigError(f"root sensor {root_sensor!r} missing from the reference frame")
    r_iw = _mean_rotation(sensor_ref[root_sensor]) @ _rot_z(heading).T
    out = {}
    for sensor_id, r_is_ref in sensor_ref.items():
        if sensor_id not in bone_ref:
            raise ConfigError(f"no reference bone orientation for sensor {sensor_id!r}")
        r_is = _mean_rotation(r_is_ref)
        r_wb = np.asarray(bone_ref[sensor_id], dtype=float)
        r_bs = (r_is.T @ r_iw @ r_wb).T
        out[sensor_id] = CalibrationMatrices(r_iw=r_iw, r_bs=r_bs)
    return out
