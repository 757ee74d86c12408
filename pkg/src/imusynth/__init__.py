"""imusynth: synthetic raw IMU streams from low-rate 6DoF trajectories.

The package covers the full loop: sensor trajectories from bone poses (with
mounting-slide perturbation), substep acceleration / angular-velocity
synthesis, sensor noise injection, error-state Kalman fusion back to
orientations (compiled kernel with pure-Python fallback), T-pose calibration
error modeling, fictitious accelerations in a moving root frame, and spectral
similarity evaluation.
"""

__version__ = "0.1.0"

from .calibration import (
    CalibrationErrorParams,
    CalibrationMatrices,
    bone_orientation,
    perturb_calibration,
    simulate_tpose_calibration,
)
from .dynamics import (
    LeafState,
    RootDynamics,
    corrected_leaf_acceleration,
    fictitious_acceleration,
    root_frame_quantities,
)
from .errors import (
    ConfigError,
    FileFormatError,
    ImuSynthError,
    InitializationError,
    SolverError,
)
from .fusion import EskfConfig, FusionResult, ZuptConfig, fuse_stream, native_available
from .metrics import SpectrumBands, orientation_error_series, spectral_cosine_similarity
from .noise import ImuNoiseParams, add_noise
from .synthesis import (
    AccelSolveConfig,
    GyroSolveConfig,
    RawImuStream,
    synthesize_stream,
)
from .trajectory import (
    BonePoseSequence,
    MountingSpec,
    SensorTrajectory,
    SlidingNoiseParams,
    ideal_sensor_trajectory,
    perturbed_sensor_trajectory,
)

__all__ = [
    "AccelSolveConfig",
    "BonePoseSequence",
    "CalibrationErrorParams",
    "CalibrationMatrices",
    "ConfigError",
    "EskfConfig",
    "FileFormatError",
    "FusionResult",
    "GyroSolveConfig",
    "ImuNoiseParams",
    "ImuSynthError",
    "InitializationError",
    "LeafState",
    "MountingSpec",
    "RawImuStream",
    "RootDynamics",
    "SensorTrajectory",
    "SlidingNoiseParams",
    "SolverError",
    "SpectrumBands",
    "ZuptConfig",
    "__version__",
    "add_noise",
    "bone_orientation",
    "corrected_leaf_acceleration",
    "fictitious_acceleration",
    "fuse_stream",
    "ideal_sensor_trajectory",
    "native_available",
    "orientation_error_series",
    "perturb_calibration",
    "perturbed_sensor_trajectory",
    "root_frame_quantities",
    "simulate_tpose_calibration",
    "spectral_cosine_similarity",
    "synthesize_stream",
]
