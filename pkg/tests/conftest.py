"""Shared helpers for the test suite: synthetic motion generators and truth
orientation grids. Plain functions, imported by test modules directly."""

import numpy as np

from imusynth.so3 import exp_so3
from imusynth.synthesis import GyroSolveConfig, solve_angular_velocities, substep_orientations
from imusynth.trajectory import SensorTrajectory

FPS = 60.0


def mixed_trajectory(rng, duration=60.0, rot_amp=0.3, rot_fmax=0.8, pos_amp=0.08, pos_fmax=1.0):
    """Human-paced random motion: band-limited rotation and translation with a
    2 s ramp-in from rest and two 5 s still segments to exercise stillness
    gating. Peak body rates land around 2-4 rad/s."""
    m = int(duration * FPS) + 1
    t = np.arange(m) / FPS
    rotvec = np.zeros((m, 3))
    pos = np.zeros((m, 3))
    for _ in range(5):
        f = rng.uniform(0.1, rot_fmax)
        phase = rng.uniform(0.0, 2.0 * np.pi, 3)
        amp = rng.uniform(0.0, rot_amp, 3)
        rotvec += amp * np.sin(2.0 * np.pi * f * t[:, None] + phase)
    for _ in range(4):
        f = rng.uniform(0.1, pos_fmax)
        phase = rng.uniform(0.0, 2.0 * np.pi, 3)
        amp = rng.uniform(0.0, pos_amp, 3)
        pos += amp * np.sin(2.0 * np.pi * f * t[:, None] + phase)

    still = [(int(20 * FPS), int(25 * FPS)), (int(45 * FPS), int(50 * FPS))]
    blend = int(0.5 * FPS)
    for a, b in still:
        if b >= m:
            continue
        rotvec[a:b] = rotvec[a]
        pos[a:b] = pos[a]
        for k in range(min(blend, m - b)):
            w = k / blend
            rotvec[b + k] = (1.0 - w) * rotvec[a] + w * rotvec[b + k]
            pos[b + k] = (1.0 - w) * pos[a] + w * pos[b + k]

    envelope = np.minimum(1.0, t / 2.0)[:, None]
    return SensorTrajectory(FPS, pos * envelope, exp_so3(rotvec * envelope))


def truth_orientations(traj, gyro_cfg=None):
    """Orientation truth on the 180 fps grid for a keyframe trajectory."""
    cfg = gyro_cfg or GyroSolveConfig()
    rates = solve_angular_velocities(traj, cfg)
    return substep_orientations(traj, rates, cfg.substeps, cfg.dt)
