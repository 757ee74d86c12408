"""Hardware-grade measurement noise for raw IMU streams.

Inertial channels get a slowly drifting bias (Brownian random walk, plus a
one-time initial draw) and additive white noise. The magnetometer gets white
noise only and is renormalized to unit length afterwards, since downstream
fusion treats it as a direction.

White-noise parameters for accel and gyro are continuous-time densities
(per-sqrt-Hz); the per-sample standard deviation is density * sqrt(rate).
The magnetometer std is per sample, the reading being dimensionless already.

Draw order from the stream's generator is fixed (accel bias init, accel walk,
accel white, gyro bias init, gyro walk, gyro white, mag white) so a given seed
always produces the same stream.
"""

from dataclasses import dataclass, replace

import numpy as np

from .synthesis import RawImuStream

# Nominal consumer-grade MEMS figures; override any of them in config.
NOISE_PROFILES = {
    "consumer-mems": {
        "accel_white_std": 2.0e-3,
        "gyro_white_std": 1.7e-4,
        "mag_white_std": 0.01,
        "accel_bias_walk": 3.0e-3,
        "gyro_bias_walk": 1.9e-5,
    },
}

# Initial bias draw is N(0, (10 * walk)^2) per axis, once per stream.
INITIAL_BIAS_FACTOR = 10.0


@dataclass(frozen=True)
class ImuNoiseParams:
    """Noise magnitudes for one sensor stream. All zero means no-op."""

    accel_white_std: float = 0.0
    gyro_white_std: float = 0.0
    mag_white_std: float = 0.0
    accel_bias_walk: float = 0.0
    gyro_bias_walk: float = 0.0
    seed: object = 0

    def __post_init__(self):
        for name in (
            "accel_white_std",
            "gyro_white_std",
            "mag_white_std",
            "accel_bias_walk",
            "gyro_bias_walk",
        ):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_profile(cls, name, seed=0, **overrides):
        if name not in NOISE_PROFILES:
            known = ", ".join(sorted(NOISE_PROFILES))
            raise ValueError(f"unknown noise profile {name!r} (known: {known})")
        values = dict(NOISE_PROFILES[name])
        values.update(overrides)
        return cls(seed=seed, **values)


@dataclass
class BiasState:
    """Per-sample bias trace, one row per inertial sample."""

    accel_bias: np.ndarray
    gyro_bias: np.ndarray


def _bias_walk(rng, walk, n, dt):
    initial = rng.normal(0.0, INITIAL_BIAS_FACTOR * walk, 3)
    steps = rng.normal(0.0, walk * np.sqrt(dt), (n - 1, 3))
    return initial + np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])


def add_noise(clean: RawImuStream, params: ImuNoiseParams):
    """Return (noisy stream, bias trace). Deterministic per params.seed."""
    rng = np.random.default_rng(params.seed)
    n = clean.accel.shape[0]
    rate = clean.sample_rate
    dt = 1.0 / rate

    accel_bias = _bias_walk(rng, params.accel_bias_walk, n, dt)
    accel_white = rng.normal(0.0, params.accel_white_std * np.sqrt(rate), (n, 3))
    gyro_bias = _bias_walk(rng, params.gyro_bias_walk, n, dt)
    gyro_white = rng.normal(0.0, params.gyro_white_std * np.sqrt(rate), (n, 3))
    mag_white = rng.normal(0.0, params.mag_white_std, clean.mag.shape)

    mag = clean.mag + mag_white
    if params.mag_white_std > 0.0:
        mag = mag / np.linalg.norm(mag, axis=1, keepdims=True)

    noisy = replace(
        clean,
        accel=clean.accel + accel_bias + accel_white,
        gyro=clean.gyro + gyro_bias + gyro_white,
        mag=mag,
    )
    return noisy, BiasState(accel_bias=accel_bias, gyro_bias=gyro_bias)
