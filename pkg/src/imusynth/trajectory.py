"""Bone pose sequences and sensor trajectories derived from them.

A sensor is rigidly mounted on a bone with a lever arm p_BS and mounting
rotation R_BS; the ideal sensor pose composes the bone pose with the mount.
The perturbed variant models the mount sliding on soft tissue: a random
initial placement offset plus per-frame random walks on the offset and on a
right-multiplied mounting rotation.
"""

from dataclasses import dataclass, field

import numpy as np

from .so3 import check_rotation, exp_so3


def _validate_track(frame_rate, positions, rotations):
    if frame_rate <= 0:
        raise ValueError("frame_rate must be positive")
    positions = np.asarray(positions, dtype=float)
    rotations = np.asarray(rotations, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ValueError("positions must be (n, 3)")
    if rotations.shape != (positions.shape[0], 3, 3):
        raise ValueError("rotations must be (n, 3, 3) matching positions")
    if positions.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    if not (np.isfinite(positions).all() and np.isfinite(rotations).all()):
        raise ValueError("non-finite pose data")
    return positions, rotations


@dataclass
class BonePoseSequence:
    """Uniformly sampled world-frame bone poses (positions [m], rotations)."""

    frame_rate: float
    positions: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        self.positions, self.rotations = _validate_track(
            self.frame_rate, self.positions, self.rotations
        )

    def __len__(self):
        return self.positions.shape[0]

    @property
    def times(self):
        return np.arange(len(self)) / self.frame_rate

    @property
    def duration(self):
        return (len(self) - 1) / self.frame_rate


@dataclass
class SensorTrajectory:
    """World-frame sensor poses at the bone keyframe rate."""

    frame_rate: float
    positions: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        self.positions, self.rotations = _validate_track(
            self.frame_rate, self.positions, self.rotations
        )

    def __len__(self):
        return self.positions.shape[0]

    @property
    def times(self):
        return np.arange(len(self)) / self.frame_rate


@dataclass
class MountingSpec:
    """Rigid sensor mount: lever arm p_BS [m] and mounting rotation R_BS.

    Lever arms are limited to 0.5 m; anything larger is a config mistake for
    body-worn sensors.
    """

    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float)
        if self.offset.shape != (3,):
            raise ValueError("offset must be a 3-vector")
        if np.linalg.norm(self.offset) >= 0.5:
            raise ValueError("mount offset must be < 0.5 m")
        self.orientation = check_rotation(
            np.asarray(self.orientation, dtype=float), name="mount orientation"
        )


@dataclass
class SlidingNoiseParams:
    """Soft-tissue mount drift model.

    initial_pos_error_mean: expected norm of the initial placement offset [m]
      (uniform direction, half-normal magnitude).
    pos_walk_rate / rot_walk_rate: random-walk intensities [m/sqrt(s)] and
      [rad/sqrt(s)]; each frame adds N(0, rate^2 * dt) per axis.
    """

    initial_pos_error_mean: float = 1e-2
    pos_walk_rate: float = 1e-3
    rot_walk_rate: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        for name in ("initial_pos_error_mean", "pos_walk_rate", "rot_walk_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def ideal_sensor_trajectory(bones: BonePoseSequence, mount: MountingSpec):
    """Compose bone poses with the rigid mount: p_WS = p_WB + R_WB p_BS,
    R_WS = R_WB R_BS."""
    positions = bones.positions + np.einsum("nij,j->ni", bones.rotations, mount.offset)
    rotations = bones.rotations @ mount.orientation
    return SensorTrajectory(bones.frame_rate, positions, rotations)


def perturbed_sensor_trajectory(
    bones: BonePoseSequence, mount: MountingSpec, noise: SlidingNoiseParams
):
    """Sensor trajectory with a sliding mount.

    The initial offset error has a uniformly random direction and half-normal
    magnitude with the configured mean; both the offset and the
    right-multiplied mounting rotation then follow per-frame Gaussian random
    walks. All draws come from one seeded generator in a fixed order, so equal
    seeds give bitwise-equal outputs and zero rates reduce exactly to the
    ideal trajectory.
    """
    rng = np.random.default_rng(noise.seed)
    m = len(bones)
    dt = 1.0 / bones.frame_rate

    direction = rng.normal(size=3)
    norm = np.linalg.norm(direction)
    while norm < 1e-12:
        direction = rng.normal(size=3)
        norm = np.linalg.norm(direction)
    direction /= norm
    # half-normal magnitude: E|N(0, s)| = s*sqrt(2/pi), so s = mean*sqrt(pi/2)
    sigma = noise.initial_pos_error_mean * np.sqrt(np.pi / 2.0)
    magnitude = abs(rng.normal(0.0, sigma))
    dp0 = magnitude * direction

    pos_steps = rng.normal(0.0, noise.pos_walk_rate * np.sqrt(dt), size=(m - 1, 3))
    dp = dp0 + np.vstack([np.zeros(3), np.cumsum(pos_steps, axis=0)])

    rot_steps = rng.normal(0.0, noise.rot_walk_rate * np.sqrt(dt), size=(m - 1, 3))
    walk = np.vstack([np.zeros(3), np.cumsum(rot_steps, axis=0)])
    delta_rot = exp_so3(walk)

    positions = bones.positions + np.einsum(
        "nij,nj->ni", bones.rotations, mount.offset + dp
    )
    rotations = bones.rotations @ mount.orientation @ delta_rot
    return SensorTrajectory(bones.frame_rate, positions, rotations)
