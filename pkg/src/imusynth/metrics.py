"""Signal and orientation metrics for comparing synthesized and real streams.

Frequency-domain cosine similarity splits the magnitude spectrum at a cutoff
(default 10 Hz) so low-band shape agreement and high-band noise content can
be scored separately.  Orientation error is the geodesic angle per frame.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .so3 import geodesic_angle, quat_to_matrix

__all__ = [
    "SpectrumBands",
    "SimilarityReport",
    "spectral_cosine_similarity",
    "orientation_error_series",
]

MIN_SAMPLES = 64


@dataclass(frozen=True)
class SpectrumBands:
    """Band split for spectral comparison: [0, cutoff) vs [cutoff, Nyquist]."""

    sample_rate: float
    cutoff_hz: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.cutoff_hz < self.sample_rate / 2.0:
            raise ConfigError(
                f"cutoff {self.cutoff_hz} Hz must lie in (0, {self.sample_rate / 2.0}) Hz"
            )


@dataclass(frozen=True)
class SimilarityReport:
    low_band: float
    high_band: float
    full_band: float


def _as_channels(sig, name):
    arr = np.asarray(sig, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ConfigError(f"{name} must be 1-D or (n, channels)")
    if not np.isfinite(arr).all():
        raise ConfigError(f"{name} contains non-finite values")
    return arr


def _cosine(a, b):
    # all-zero band on either side carries no shape information: score 0
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def spectral_cosine_similarity(sig_a, sig_b, bands, window=True):
    """Cosine similarity of magnitude spectra, per band, averaged channels.

    A periodic Hann window limits leakage by default; window=False compares
    raw periodograms.  Bins below the cutoff (DC included) form the low
    band, the rest the high band; the two are a partition of the full band.
    """
    a = _as_channels(sig_a, "sig_a")
    b = _as_channels(sig_b, "sig_b")
    if a.shape != b.shape:
        raise ConfigError(f"signal shapes differ: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < MIN_SAMPLES:
        raise ConfigError(f"need at least {MIN_SAMPLES} samples, got {n}")

    if window:
        w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
        a = a * w[:, None]
        b = b * w[:, None]
    mag_a = np.abs(np.fft.rfft(a, axis=0))
    mag_b = np.abs(np.fft.rfft(b, axis=0))
    freqs = np.fft.rfftfreq(n, 1.0 / bands.sample_rate)
    low = freqs < bands.cutoff_hz

    scores = {"low": [], "high": [], "full": []}
    for c in range(a.shape[1]):
        scores["low"].append(_cosine(mag_a[low, c], mag_b[low, c]))
        scores["high"].append(_cosine(mag_a[~low, c], mag_b[~low, c]))
        scores["full"].append(_cosine(mag_a[:, c], mag_b[:, c]))
    return SimilarityReport(
        low_band=float(np.mean(scores["low"])),
        high_band=float(np.mean(scores["high"])),
        full_band=float(np.mean(scores["full"])),
    )


def _as_rotations(seq, name):
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 4:
        arr = quat_to_matrix(arr)
    if arr.ndim != 3 or arr.shape[1:] != (3, 3):
        raise ConfigError(f"{name} must be (n, 3, 3) rotations or (n, 4) quaternions")
    return arr


def orientation_error_series(estimated, truth):
    """Per-frame geodesic error in degrees plus its mean.

    Accepts rotation-matrix or quaternion sequences (mixing is fine).
    """
    est = _as_rotations(estimated, "estimated")
    ref = _as_rotations(truth, "truth")
    if est.shape[0] != ref.shape[0]:
        raise ConfigError(f"sequence lengths differ: {est.shape[0]} vs {ref.shape[0]}")
    errors = np.degrees(geodesic_angle(est, ref))
    return errors, float(errors.mean())
