"""Tests for the error-state Kalman filter.

Oracles: closed-form gyro integration for predict, TRIAD hand solutions for
init, single-update error-reduction checks against known true attitudes, and
filter convergence runs against the synthesis truth grid.
"""

import numpy as np
import pytest
from conftest import mixed_trajectory, truth_orientations
from dataclasses import replace

from imusynth.errors import ConfigError, InitializationError
from imusynth.fusion import (
    EskfConfig,
    EskfState,
    ZuptConfig,
    eskf_init,
    eskf_predict,
    eskf_update_gravity,
    eskf_update_mag,
    eskf_zupt,
    fuse_stream,
    gravity_gate,
    native_available,
    zupt_triggered,
)
from imusynth.noise import ImuNoiseParams, add_noise
from imusynth.so3 import exp_so3, geodesic_angle, quat_to_matrix
from imusynth.synthesis import RawImuStream, synthesize_stream
from imusynth.trajectory import SensorTrajectory

DT = 1.0 / 180.0


def _static_stream(n_samples, rotation=None, gyro_bias=None):
    rotation = np.eye(3) if rotation is None else rotation
    gyro_bias = np.zeros(3) if gyro_bias is None else np.asarray(gyro_bias, dtype=float)
    m = n_samples // 3 + 1
    n = 3 * (m - 1)
    force = rotation.T @ np.array([0.0, 0.0, 9.81])
    mag = rotation.T @ np.array([1.0, 0.0, 0.0])
    return RawImuStream(
        accel=np.tile(force, (n, 1)),
        gyro=np.tile(gyro_bias, (n, 1)),
        mag=np.tile(mag / np.linalg.norm(mag), (m, 1)),
        sample_rate=180.0,
        keyframe_rate=60.0,
        gravity=np.array([0.0, 0.0, -9.81]),
    )


# ---------------------------------------------------------------------------
# initialization


def test_init_identity_attitude():
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(state.q_nominal, [1.0, 0.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_array_equal(np.diag(state.P), [1e-2] * 3 + [1e-4] * 3)
    np.testing.assert_array_equal(state.gyro_bias, np.zeros(3))


def test_init_recovers_yaw_from_mag():
    # field seen at sensor -y means the sensor is yawed +90 degrees
    state = eskf_init([0.0, 0.0, 9.81], [0.0, -1.0, 0.0])
    rot = quat_to_matrix(state.q_nominal)
    yaw = np.degrees(np.arctan2(rot[1, 0], rot[0, 0]))
    assert abs(yaw - 90.0) < 1e-9


def test_init_recovers_tilt_and_heading():
    true_rot = exp_so3(np.array([0.3, -0.4, 1.1]))
    force = true_rot.T @ np.array([0.0, 0.0, 9.81])
    mag = true_rot.T @ np.array([1.0, 0.0, 0.0])
    state = eskf_init(force, mag)
    assert geodesic_angle(quat_to_matrix(state.q_nominal), true_rot) < 1e-12


def test_init_rejects_bad_accel_norm():
    with pytest.raises(InitializationError, match="accelerometer norm"):
        eskf_init([0.0, 0.0, 20.0], [1.0, 0.0, 0.0])
    with pytest.raises(InitializationError, match="accelerometer norm"):
        eskf_init([0.0, 0.0, 2.0], [1.0, 0.0, 0.0])


def test_init_rejects_mag_parallel_to_gravity():
    with pytest.raises(InitializationError, match="magnetometer"):
        eskf_init([0.0, 0.0, 9.81], [0.0, 0.0, 1.0])
    # 3 degrees off vertical is still inside the 5 degree guard
    mag = exp_so3(np.array([np.radians(3.0), 0.0, 0.0])) @ np.array([0.0, 0.0, 1.0])
    with pytest.raises(InitializationError, match="magnetometer"):
        eskf_init([0.0, 0.0, 9.81], mag)


# ---------------------------------------------------------------------------
# predict


def test_predict_integrates_constant_yaw_rate():
    cfg = EskfConfig()
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    for _ in range(1000):
        state = eskf_predict(state, [0.0, 0.0, 1.0], DT, cfg)
    rot = quat_to_matrix(state.q_nominal)
    yaw = np.arctan2(rot[1, 0], rot[0, 0])
    expected = (1000.0 / 180.0) % (2.0 * np.pi)
    if expected > np.pi:
        expected -= 2.0 * np.pi
    assert abs(yaw - expected) < 1e-6


def test_predict_bias_cancels_exactly():
    cfg = EskfConfig()
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    state.gyro_bias = np.array([0.1, -0.2, 0.3])
    before = state.q_nominal.copy()
    after = eskf_predict(state, state.gyro_bias, DT, cfg)
    np.testing.assert_array_equal(after.q_nominal, before)


def test_predict_only_covariance_grows():
    cfg = EskfConfig()
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    traces = [np.trace(state.P)]
    for _ in range(10):
        state = eskf_predict(state, [0.1, 0.0, 0.5], DT, cfg)
        traces.append(np.trace(state.P))
        assert np.abs(state.P - state.P.T).max() < 1e-15
    assert all(b > a for a, b in zip(traces, traces[1:]))


def test_state_stays_normalized_and_psd():
    cfg = EskfConfig()
    rng = np.random.default_rng(6)
    state = eskf_init([0.0, 0.3, 9.7], [0.9, 0.1, -0.2])
    for s in range(200):
        state = eskf_predict(state, rng.normal(0.0, 0.5, 3), DT, cfg)
        if s % 3 == 0:
            state = eskf_update_gravity(state, [0.0, 0.0, 9.81], cfg)
        if s % 9 == 0:
            state = eskf_update_mag(state, [1.0, 0.0, 0.0], cfg)
        assert abs(np.linalg.norm(state.q_nominal) - 1.0) < 1e-9
        assert np.abs(state.P - state.P.T).max() < 1e-15
        assert np.linalg.eigvalsh(state.P).min() > -1e-15


# ---------------------------------------------------------------------------
# gravity update


def test_gravity_update_shrinks_tilt_error():
    cfg = EskfConfig()
    true_rot = exp_so3(np.array([0.0, np.radians(1.0), 0.0]))
    force = true_rot.T @ np.array([0.0, 0.0, 9.81])
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    before = geodesic_angle(quat_to_matrix(state.q_nominal), true_rot)
    state = eskf_update_gravity(state, force, cfg)
    after = geodesic_angle(quat_to_matrix(state.q_nominal), true_rot)
    # frozen: 1 deg -> 0.018 deg with the P0 / R defaults
    assert after < 0.1 * before


def test_gravity_update_gated_on_norm():
    cfg = EskfConfig()
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    assert not gravity_gate([0.0, 0.0, 15.0], cfg)
    assert gravity_gate([0.0, 0.05, 9.78], cfg)
    same = eskf_update_gravity(state, [0.0, 0.0, 15.0], cfg)
    assert same is state


def test_gravity_update_zero_innovation_keeps_attitude():
    cfg = EskfConfig()
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    q_before = state.q_nominal.copy()
    state = eskf_update_gravity(state, [0.0, 0.0, 9.81], cfg)
    np.testing.assert_allclose(state.q_nominal, q_before, atol=1e-15)
    # covariance still shrinks: the measurement carries tilt information
    assert np.trace(state.P[:3, :3]) < 3 * 1e-2


# ---------------------------------------------------------------------------
# magnetometer update


def test_mag_update_shrinks_yaw_error_only():
    cfg = EskfConfig()
    true_rot = exp_so3(np.array([0.0, 0.0, np.radians(5.0)]))
    mag = true_rot.T @ np.array([1.0, 0.0, 0.0])
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    before = geodesic_angle(quat_to_matrix(state.q_nominal), true_rot)
    up_before = quat_to_matrix(state.q_nominal)[2]
    state = eskf_update_mag(state, mag, cfg)
    rot = quat_to_matrix(state.q_nominal)
    after = geodesic_angle(rot, true_rot)
    # frozen: 5 deg -> 0.41 deg
    assert after < 0.2 * before
    tilt_change = np.degrees(np.arccos(np.clip(np.dot(up_before, rot[2]), -1.0, 1.0)))
    assert tilt_change < 0.05


def test_mag_update_consistent_field_is_noop():
    cfg = EskfConfig()
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    q_before = state.q_nominal.copy()
    state = eskf_update_mag(state, [1.0, 0.0, 0.0], cfg)
    np.testing.assert_allclose(state.q_nominal, q_before, atol=1e-15)


def test_mag_update_skips_near_vertical_field():
    cfg = EskfConfig()
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    same = eskf_update_mag(state, [0.0, 0.0, 1.0], cfg)
    assert same is state


# ---------------------------------------------------------------------------
# zero-velocity update


def test_zupt_never_triggers_while_moving():
    cfg = EskfConfig()
    gyro = np.tile([1.0, 0.0, 0.0], (cfg.zupt.window, 1))
    accel = np.tile([0.0, 0.0, 9.81], (cfg.zupt.window, 1))
    assert not zupt_triggered(gyro, accel, cfg)
    state = eskf_init([0.0, 0.0, 9.81], [1.0, 0.0, 0.0])
    same = eskf_zupt(state, gyro, accel, cfg)
    assert same is state


def test_zupt_estimates_constant_bias_within_ten_percent():
    bias = np.array([0.01, 0.0, 0.0])
    stream = _static_stream(6 * 180, gyro_bias=bias)
    cfg = EskfConfig()
    w = cfg.zupt.window
    state = eskf_init(stream.accel[0], stream.mag[0])
    bias_at_5s = None
    for s in range(1, stream.accel.shape[0]):
        state = eskf_predict(state, stream.gyro[s - 1], DT, cfg)
        state = eskf_update_gravity(state, stream.accel[s], cfg)
        if s >= w:
            state = eskf_zupt(state, stream.gyro[s - w : s], stream.accel[s - w + 1 : s + 1], cfg)
        if s == 5 * 180:
            bias_at_5s = state.gyro_bias.copy()
    assert abs(bias_at_5s[0] / bias[0] - 1.0) < 0.10
    assert np.abs(bias_at_5s[1:]).max() < 0.1 * bias[0]


def test_zupt_noise_free_static_keeps_zero_bias():
    stream = _static_stream(2 * 180)
    cfg = EskfConfig()
    w = cfg.zupt.window
    state = eskf_init(stream.accel[0], stream.mag[0])
    for s in range(w, 2 * w):
        state = eskf_zupt(state, stream.gyro[s - w : s], stream.accel[s - w + 1 : s + 1], cfg)
    assert np.abs(state.gyro_bias).max() < 1e-12


def test_zupt_config_validation():
    with pytest.raises(ValueError):
        ZuptConfig(window=0)
    with pytest.raises(ValueError):
        ZuptConfig(gyro_norm_thresh=0.0)


# ---------------------------------------------------------------------------
# full-stream fusion


def test_fuse_static_converges_within_half_degree():
    true_rot = exp_so3(np.array([0.3, -0.5, 1.2]))
    stream = _static_stream(3 * 180, rotation=true_rot)
    result = fuse_stream(stream, backend="python")
    errs = np.degrees(geodesic_angle(quat_to_matrix(result.quaternions), true_rot[None]))
    assert errs[180:].max() < 0.5


def test_fuse_constant_spin_tracks_truth():
    m = 241
    t = np.arange(m) / 60.0
    rots = exp_so3(np.outer(t, [0.0, 0.0, 2.0]))
    traj = SensorTrajectory(60.0, np.zeros((m, 3)), rots)
    stream = synthesize_stream(traj)
    result = fuse_stream(stream, backend="python")
    truth = truth_orientations(traj)
    errs = np.degrees(geodesic_angle(quat_to_matrix(result.quaternions), truth))
    assert errs[180:].max() < 0.5


def test_fuse_noisy_mixed_motion_under_two_and_a_half_degrees():
    rng = np.random.default_rng(103)
    traj = mixed_trajectory(rng)
    clean = synthesize_stream(traj)
    noisy, _ = add_noise(clean, ImuNoiseParams.from_profile("consumer-mems", seed=3))
    result = fuse_stream(noisy, backend="python")
    errs = np.degrees(geodesic_angle(quat_to_matrix(result.quaternions), truth_orientations(traj)))
    # frozen: 0.75 deg mean for this seed
    assert errs.mean() < 2.5


def test_fuse_output_quaternions_unit_norm():
    rng = np.random.default_rng(103)
    traj = mixed_trajectory(rng, duration=5.0)
    stream = synthesize_stream(traj)
    result = fuse_stream(stream, backend="python")
    np.testing.assert_allclose(np.linalg.norm(result.quaternions, axis=1), 1.0, atol=1e-9)
    assert result.quaternions.shape == (stream.accel.shape[0], 4)


def test_yaw_unobservable_without_mag():
    clean = _static_stream(60 * 180)
    noisy, _ = add_noise(clean, ImuNoiseParams(gyro_white_std=5e-3, gyro_bias_walk=2e-4, seed=8))
    cfg = EskfConfig(
        gyro_white_std=5e-3,
        gyro_bias_walk=2e-4,
        use_mag=False,
        zupt=ZuptConfig(gyro_norm_thresh=1e-12, accel_dev_thresh=1e-12),
    )
    result = fuse_stream(noisy, cfg, backend="python")
    rot = quat_to_matrix(result.quaternions)
    yaw = np.abs(np.degrees(np.arctan2(rot[:, 1, 0], rot[:, 0, 0])))
    tilt = np.degrees(np.arccos(np.clip(rot[:, 2, 2], -1.0, 1.0)))
    assert yaw[-1800:].mean() > 2.0 * yaw[:1800].mean()
    assert tilt.max() < 1.0
    # with mag the yaw stays pinned
    with_mag = fuse_stream(noisy, replace(cfg, use_mag=True), backend="python")
    rot2 = quat_to_matrix(with_mag.quaternions)
    yaw2 = np.abs(np.degrees(np.arctan2(rot2[:, 1, 0], rot2[:, 0, 0])))
    assert yaw2[-1800:].mean() < 1.0


def test_raising_gravity_gate_never_reduces_update_count():
    rng = np.random.default_rng(3)
    n = 1800
    m = n // 3 + 1
    accel = np.tile([0.0, 0.0, 9.81], (n, 1)) + rng.normal(0.0, 0.5, (n, 3))
    stream = RawImuStream(
        accel=accel,
        gyro=np.zeros((n, 3)),
        mag=np.tile([1.0, 0.0, 0.0], (m, 1)),
        sample_rate=180.0,
        keyframe_rate=60.0,
        gravity=np.array([0.0, 0.0, -9.81]),
    )
    counts = [
        fuse_stream(stream, EskfConfig(accel_dev_thresh=th), backend="python").gravity_updates
        for th in (0.02, 0.05, 0.1, 0.3, 0.8, 2.0)
    ]
    assert all(b >= a for a, b in zip(counts, counts[1:]))


def test_fuse_rejects_short_streams_and_bad_backend():
    short = _static_stream(9)
    with pytest.raises(ConfigError, match="ZUPT window"):
        fuse_stream(short, backend="python")
    stream = _static_stream(120)
    with pytest.raises(ConfigError, match="backend"):
        fuse_stream(stream, backend="fortran")


def test_fuse_propagates_init_error():
    stream = _static_stream(120)
    stream.accel[0] = [0.0, 0.0, 30.0]
    with pytest.raises(InitializationError):
        fuse_stream(stream, backend="python")


@pytest.mark.skipif(not native_available(), reason="compiled extension not built")
def test_native_backend_matches_python():
    rng = np.random.default_rng(104)
    traj = mixed_trajectory(rng, duration=20.0)
    clean = synthesize_stream(traj)
    noisy, _ = add_noise(clean, ImuNoiseParams.from_profile("consumer-mems", seed=4))
    py = fuse_stream(noisy, backend="python")
    nat = fuse_stream(noisy, backend="native")
    assert (py.gravity_updates, py.mag_updates, py.zupt_updates) == (
        nat.gravity_updates,
        nat.mag_updates,
        nat.zupt_updates,
    )
    assert np.abs(py.quaternions - nat.quaternions).max() < 1e-12


@pytest.mark.skipif(not native_available(), reason="compiled extension not built")
def test_auto_backend_prefers_native():
    stream = _static_stream(120)
    assert fuse_stream(stream).backend == "native"
