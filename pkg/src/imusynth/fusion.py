"""Error-state Kalman filter fusing raw IMU streams into orientations.

State: nominal unit quaternion q (sensor-to-world R_IS) and gyro bias, with a
6-dim error state (attitude error theta, bias error) and covariance P. The
attitude error is a right perturbation, R = R_hat * Exp(theta), so theta lives
in the sensor frame.

Per 180 fps sample: predict with the previous gyro reading, then a gravity
update gated on the specific-force norm being close to g, then a
zero-velocity bias refinement when the recent window looks static. Per 60 fps
keyframe: a heading-only magnetometer update. The world frame is gravity-up
with x toward horizontal magnetic north, so the filter output is directly
comparable to the synthesis input frame.

The hot loop has a compiled twin in ``_native``; ``fuse_stream`` picks it by
default and falls back to the pure-Python path. Both follow the exact same
operation order so results agree to floating-point noise.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InitializationError
from .so3 import (
    exp_so3,
    matrix_to_quat,
    quat_exp,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    skew,
)
from .synthesis import RawImuStream

ATTITUDE_VAR_0 = 1e-2
BIAS_VAR_0 = 1e-4

# Measurement-noise inflation over the raw white-noise level: the gravity
# update absorbs unmodeled linear acceleration, the mag update soft-iron-ish
# direction error.
GRAVITY_R_FACTOR = 5.0
MAG_R_FACTOR = 3.0

MIN_HORIZONTAL_MAG = 0.1


@dataclass(frozen=True)
class ZuptConfig:
    """Stillness detection: all samples in the window must pass both gates."""

    gyro_norm_thresh: float = 0.02
    accel_dev_thresh: float = 0.1
    window: int = 20

    def __post_init__(self):
        if self.gyro_norm_thresh <= 0.0 or self.accel_dev_thresh <= 0.0:
            raise ValueError("ZUPT thresholds must be positive")
        if self.window < 1:
            raise ValueError("ZUPT window must be at least 1")


@dataclass(frozen=True)
class EskfConfig:
    """Filter tuning. White/walk fields are the sensor noise densities the
    filter assumes; defaults match the consumer-mems noise profile."""

    gyro_white_std: float = 1.7e-4
    gyro_bias_walk: float = 1.9e-5
    accel_white_std: float = 2.0e-3
    mag_white_std: float = 0.01
    accel_dev_thresh: float = 0.1
    gravity_mag: float = 9.81
    sample_rate: float = 180.0
    use_mag: bool = True
    zupt: ZuptConfig = field(default_factory=ZuptConfig)

    def accel_white_per_sample(self):
        return self.accel_white_std * np.sqrt(self.sample_rate)

    def gyro_white_per_sample(self):
        return self.gyro_white_std * np.sqrt(self.sample_rate)


@dataclass
class EskfState:
    q_nominal: np.ndarray
    gyro_bias: np.ndarray
    P: np.ndarray


@dataclass
class FusionResult:
    quaternions: np.ndarray
    gravity_updates: int
    mag_updates: int
    zupt_updates: int
    backend: str


def eskf_init(first_accel, first_mag, gravity_mag=9.81) -> EskfState:
    """TRIAD-style attitude from one accel (gravity) and one mag (north) read."""
    f = np.asarray(first_accel, dtype=float)
    m = np.asarray(first_mag, dtype=float)
    f_norm = np.linalg.norm(f)
    if not 0.5 * gravity_mag <= f_norm <= 1.5 * gravity_mag:
        raise InitializationError(
            f"accelerometer norm {f_norm:.3f} outside [0.5g, 1.5g]; "
            "cannot take the first sample as a gravity reference"
        )
    m_norm = np.linalg.norm(m)
    if m_norm == 0.0:
        raise InitializationError("magnetometer sample is zero")
    up_s = f / f_norm
    m_unit = m / m_norm
    if abs(np.dot(m_unit, up_s)) > np.cos(np.radians(5.0)):
        raise InitializationError(
            "magnetometer within 5 degrees of the accelerometer axis; "
            "heading is unobservable from this sample pair"
        )
    north_s = m_unit - np.dot(m_unit, up_s) * up_s
    north_s /= np.linalg.norm(north_s)
    # rows of R_IS are the world axes expressed in the sensor frame
    rot = np.vstack([north_s, np.cross(up_s, north_s), up_s])
    p0 = np.diag([ATTITUDE_VAR_0] * 3 + [BIAS_VAR_0] * 3)
    return EskfState(q_nominal=matrix_to_quat(rot), gyro_bias=np.zeros(3), P=p0)


def eskf_predict(state: EskfState, gyro_sample, dt, cfg: EskfConfig) -> EskfState:
    omega = np.asarray(gyro_sample, dtype=float) - state.gyro_bias
    q = quat_normalize(quat_multiply(state.q_nominal, quat_exp(omega * dt)))
    f = np.eye(6)
    f[:3, :3] = exp_so3(-omega * dt)
    f[:3, 3:] = -dt * np.eye(3)
    qd = np.zeros((6, 6))
    qd[:3, :3] = cfg.gyro_white_std**2 * dt * np.eye(3)
    qd[3:, 3:] = cfg.gyro_bias_walk**2 * dt * np.eye(3)
    p = f @ state.P @ f.T + qd
    return EskfState(q_nominal=q, gyro_bias=state.gyro_bias.copy(), P=p)


def _apply_update(state, h, innovation, r_cov):
    """Kalman step on the error state with Joseph-form covariance, then
    injection of the error into the nominal state."""
    h = np.atleast_2d(h)
    innovation = np.atleast_1d(innovation)
    r_cov = np.atleast_2d(r_cov)
    s = h @ state.P @ h.T + r_cov
    k = np.linalg.solve(s, h @ state.P).T
    dx = k @ innovation
    ikh = np.eye(6) - k @ h
    p = ikh @ state.P @ ikh.T + k @ r_cov @ k.T
    p = 0.5 * (p + p.T)
    q = quat_normalize(quat_multiply(state.q_nominal, quat_exp(dx[:3])))
    return EskfState(q_nominal=q, gyro_bias=state.gyro_bias + dx[3:], P=p)


def gravity_gate(accel_sample, cfg: EskfConfig) -> bool:
    return bool(
        abs(np.linalg.norm(np.asarray(accel_sample, dtype=float)) - cfg.gravity_mag)
        < cfg.accel_dev_thresh
    )


def eskf_update_gravity(state: EskfState, accel_sample, cfg: EskfConfig) -> EskfState:
    if not gravity_gate(accel_sample, cfg):
        return state
    rot = quat_to_matrix(state.q_nominal)
    h_pred = rot.T @ np.array([0.0, 0.0, cfg.gravity_mag])
    h = np.zeros((3, 6))
    h[:, :3] = skew(h_pred)
    innovation = np.asarray(accel_sample, dtype=float) - h_pred
    r = (GRAVITY_R_FACTOR * cfg.accel_white_per_sample()) ** 2 * np.eye(3)
    return _apply_update(state, h, innovation, r)


def mag_applicable(state: EskfState, mag_sample) -> bool:
    u = quat_to_matrix(state.q_nominal) @ np.asarray(mag_sample, dtype=float)
    return bool(np.hypot(u[0], u[1]) >= MIN_HORIZONTAL_MAG)


def eskf_update_mag(state: EskfState, mag_sample, cfg: EskfConfig) -> EskfState:
    """Heading-only update: the field direction, mapped to the world frame and
    projected to the horizontal plane, should point along +x."""
    m = np.asarray(mag_sample, dtype=float)
    rot = quat_to_matrix(state.q_nominal)
    u = rot @ m
    rho2 = u[0] ** 2 + u[1] ** 2
    if np.sqrt(rho2) < MIN_HORIZONTAL_MAG:
        return state
    psi = np.arctan2(u[1], u[0])
    dpsi_du = np.array([-u[1], u[0], 0.0]) / rho2
    h = np.zeros((1, 6))
    h[0, :3] = dpsi_du @ (-rot @ skew(m))
    r = np.array([[(MAG_R_FACTOR * cfg.mag_white_std) ** 2]])
    return _apply_update(state, h, np.array([-psi]), r)


def zupt_triggered(gyro_window, accel_window, cfg: EskfConfig) -> bool:
    gyro_window = np.asarray(gyro_window, dtype=float)
    accel_window = np.asarray(accel_window, dtype=float)
    if len(gyro_window) < cfg.zupt.window or len(accel_window) < cfg.zupt.window:
        return False
    gyro_ok = np.linalg.norm(gyro_window, axis=1) < cfg.zupt.gyro_norm_thresh
    accel_ok = (
        np.abs(np.linalg.norm(accel_window, axis=1) - cfg.gravity_mag)
        < cfg.zupt.accel_dev_thresh
    )
    return bool(gyro_ok.all() and accel_ok.all())


def eskf_zupt(state: EskfState, gyro_window, accel_window, cfg: EskfConfig) -> EskfState:
    """During stillness the gyro reads pure bias; the windowed mean becomes a
    direct bias pseudo-measurement."""
    if not zupt_triggered(gyro_window, accel_window, cfg):
        return state
    z = np.asarray(gyro_window, dtype=float)[-cfg.zupt.window :].mean(axis=0)
    h = np.zeros((3, 6))
    h[:, 3:] = np.eye(3)
    r = (cfg.gyro_white_per_sample() ** 2 / cfg.zupt.window) * np.eye(3)
    return _apply_update(state, h, z - state.gyro_bias, r)


def _fuse_stream_python(stream: RawImuStream, cfg: EskfConfig):
    n_ratio = int(round(stream.sample_rate / stream.keyframe_rate))
    n = stream.accel.shape[0]
    dt = 1.0 / stream.sample_rate
    w = cfg.zupt.window
    state = eskf_init(stream.accel[0], stream.mag[0], cfg.gravity_mag)
    quats = np.empty((n, 4))
    quats[0] = state.q_nominal
    n_grav = n_mag = n_zupt = 0
    for s in range(1, n):
        state = eskf_predict(state, stream.gyro[s - 1], dt, cfg)
        if gravity_gate(stream.accel[s], cfg):
            state = eskf_update_gravity(state, stream.accel[s], cfg)
            n_grav += 1
        if cfg.use_mag and s % n_ratio == 0:
            mag = stream.mag[s // n_ratio]
            if mag_applicable(state, mag):
                state = eskf_update_mag(state, mag, cfg)
                n_mag += 1
        if s >= w:
            gyro_win = stream.gyro[s - w : s]
            accel_win = stream.accel[s - w + 1 : s + 1]
            if zupt_triggered(gyro_win, accel_win, cfg):
                state = eskf_zupt(state, gyro_win, accel_win, cfg)
                n_zupt += 1
        quats[s] = state.q_nominal
    return quats, n_grav, n_mag, n_zupt


def native_available() -> bool:
    try:
        from . import _native  # noqa: F401
    except ImportError:
        return False
    return True


def fuse_stream(stream: RawImuStream, cfg: EskfConfig | None = None, backend="auto") -> FusionResult:
    """Run the full filter over a stream; orientations on the 180 fps grid."""
    cfg = cfg or EskfConfig()
    if stream.sample_rate != cfg.sample_rate:
        cfg = replace(cfg, sample_rate=stream.sample_rate)
    if stream.accel.shape[0] < cfg.zupt.window:
        raise ConfigError(
            f"stream has {stream.accel.shape[0]} samples; "
            f"need at least the ZUPT window ({cfg.zupt.window})"
        )
    if backend not in ("auto", "python", "native"):
        raise ConfigError(f"unknown backend {backend!r}")
    if backend == "auto":
        backend = "native" if native_available() else "python"
    if backend == "native":
        if not native_available():
            raise ConfigError("native backend requested but the extension is not built")
        from . import _native

        init = eskf_init(stream.accel[0], stream.mag[0], cfg.gravity_mag)
        quats, n_grav, n_mag, n_zupt = _native.fuse_loop(
            np.ascontiguousarray(stream.accel),
            np.ascontiguousarray(stream.gyro),
            np.ascontiguousarray(stream.mag),
            init.q_nominal,
            init.P,
            int(round(stream.sample_rate / stream.keyframe_rate)),
            1.0 / stream.sample_rate,
            cfg.gyro_white_std,
            cfg.gyro_bias_walk,
            cfg.accel_white_per_sample(),
            cfg.mag_white_std,
            cfg.accel_dev_thresh,
            cfg.gravity_mag,
            1 if cfg.use_mag else 0,
            cfg.zupt.gyro_norm_thresh,
            cfg.zupt.accel_dev_thresh,
            cfg.zupt.window,
        )
    else:
        quats, n_grav, n_mag, n_zupt = _fuse_stream_python(stream, cfg)
    return FusionResult(
        quaternions=quats,
        gravity_updates=n_grav,
        mag_updates=n_mag,
        zupt_updates=n_zupt,
        backend=backend,
    )
