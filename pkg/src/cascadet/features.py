"""Stage-1 statistical features and the multi-domain vibration feature extractor.

The statistical extractor emits [mean, std, min, max] per channel in
channel-major order, 4*D features total; std is the population standard
deviation (divisor T). Feature names follow the "<channel>_<stat>" contract
that the attribution aggregation relies on.

The vibration extractor produces exactly 32 features across four groups
(time domain, frequency domain, envelope spectrum, statistical moments plus
10 log band energies). The exact composition is an artifact decision, tagged
VIBRATION_FEATURE_SET in reports. Spectra come from the module's own radix-2
transform, with power-of-two zero padding applied internally.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from cascadet.data.types import SensorWindow

STAT_NAMES = ("mean", "std", "min", "max")
VIBRATION_FEATURE_SET = "artifact feature set v1"


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.values) != len(self.names):
            raise ValueError("feature values and names must be parallel")


def extract_statistical(window: SensorWindow) -> FeatureVector:
    """Per-channel [mean, std, min, max] of one window."""
    values = window.values.astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("window contains non-finite values")
    feats = np.stack(
        [values.mean(axis=0), values.std(axis=0), values.min(axis=0), values.max(axis=0)],
        axis=1,
    ).reshape(-1)
    names = statistical_feature_names(window.channel_names)
    return FeatureVector(values=feats, names=names)


def statistical_feature_names(channel_names: Sequence[str]) -> tuple[str, ...]:
    return tuple(f"{ch}_{stat}" for ch in channel_names for stat in STAT_NAMES)


def extract_statistical_matrix(windows: np.ndarray, channel_names: Sequence[str]):
    """Vectorized statistical features for stacked [n x T x D] windows.

    Returns (X [n x 4D], names).
    """
    windows = windows.astype(np.float64)
    if not np.all(np.isfinite(windows)):
        raise ValueError("windows contain non-finite values")
    stats = np.stack(
        [
            windows.mean(axis=1),
            windows.std(axis=1),
            windows.min(axis=1),
            windows.max(axis=1),
        ],
        axis=2,
    )
    n = windows.shape[0]
    return stats.reshape(n, -1), statistical_feature_names(channel_names)


# ---------------------------------------------------------------------------
# Radix-2 transform (iterative Cooley-Tukey). Ships with its own round-trip
# property test; used for every spectrum below.
# ---------------------------------------------------------------------------


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Forward DFT of a power-of-two-length sequence."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    if n == 0 or (n & (n - 1)) != 0:
        raise ValueError(f"radix-2 transform needs a power-of-two length, got {n}")
    out = x[_bit_reverse_indices(n)].copy()
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(-1, size)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * twiddle
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        size *= 2
    return out


def ifft_radix2(x: np.ndarray) -> np.ndarray:
    """Inverse of fft_radix2."""
    x = np.asarray(x, dtype=np.complex128)
    return np.conj(fft_radix2(np.conj(x))) / x.shape[0]


def _pad_pow2(signal: np.ndarray) -> np.ndarray:
    n = signal.shape[0]
    target = 1 << (n - 1).bit_length()
    if target == n:
        return signal
    padded = np.zeros(target, dtype=np.float64)
    padded[:n] = signal
    return padded


def _spectrum_stats(mag: np.ndarray, freqs: np.ndarray) -> tuple[float, float, float, float]:
    """(mean, std, peak frequency, spectral centroid) of a one-sided magnitude spectrum."""
    total = mag.sum()
    centroid = float((freqs * mag).sum() / total) if total > 0 else 0.0
    peak = float(freqs[int(np.argmax(mag))]) if mag.size else 0.0
    return float(mag.mean()), float(mag.std()), peak, centroid


def _analytic_envelope(padded: np.ndarray) -> np.ndarray:
    """Magnitude of the analytic signal (negative frequencies zeroed, positive doubled)."""
    n = padded.shape[0]
    spec = fft_radix2(padded)
    gain = np.zeros(n)
    gain[0] = 1.0
    gain[n // 2] = 1.0
    gain[1 : n // 2] = 2.0
    return np.abs(ifft_radix2(spec * gain))


def extract_vibration_multidomain(signal: np.ndarray, sample_rate: float) -> FeatureVector:
    """32-feature multi-domain vector for a single vibration channel."""
    signal = np.asarray(signal, dtype=np.float64).reshape(-1)
    n = signal.shape[0]
    if n < 64:
        raise ValueError(f"vibration extraction needs at least 64 samples, got {n}")
    if not np.all(np.isfinite(signal)):
        raise ValueError("signal contains non-finite values")

    mean = signal.mean()
    std = signal.std()
    rms = float(np.sqrt(np.mean(signal**2)))
    if rms == 0.0:
        raise ValueError("zero-energy signal: crest/shape factors undefined")
    if std == 0.0:
        raise ValueError("constant signal: kurtosis undefined")
    abs_mean = float(np.abs(signal).mean())
    centered = signal - mean
    kurtosis = float(np.mean(centered**4) / np.mean(centered**2) ** 2)
    crest = float(np.abs(signal).max() / rms)
    shape = rms / abs_mean
    time_feats = [mean, std, signal.min(), signal.max(), rms, kurtosis, crest, shape]

    padded = _pad_pow2(signal)
    m = padded.shape[0]
    spec = fft_radix2(padded)
    freqs = np.arange(1, m // 2 + 1) * (sample_rate / m)
    mag = np.abs(spec[1 : m // 2 + 1])
    freq_feats = list(_spectrum_stats(mag, freqs))

    envelope = _analytic_envelope(_pad_pow2(signal - mean))
    env_spec = np.abs(fft_radix2(envelope)[1 : m // 2 + 1])
    env_feats = list(_spectrum_stats(env_spec, freqs))

    q1, q2, q3 = (float(q) for q in np.percentile(signal, (25, 50, 75)))
    variance = float(std**2)
    energy = float(np.sum(signal**2))
    sign_products = signal[:-1] * signal[1:]
    zcr = float(np.count_nonzero(sign_products < 0) / (n - 1))
    band_edges = np.linspace(0, mag.shape[0], 11).astype(int)
    band_feats = [
        float(np.log(np.sum(mag[band_edges[i] : band_edges[i + 1]] ** 2) + 1e-12))
        for i in range(10)
    ]
    stat_feats = [q1, q2, q3, variance, energy, zcr] + band_feats

    values = np.array(time_feats + freq_feats + env_feats + stat_feats)
    names = (
        "time_mean",
        "time_std",
        "time_min",
        "time_max",
        "time_rms",
        "time_kurtosis",
        "time_crest",
        "time_shape",
        "freq_mag_mean",
        "freq_mag_std",
        "freq_peak_hz",
        "freq_centroid_hz",
        "env_mag_mean",
        "env_mag_std",
        "env_peak_hz",
        "env_centroid_hz",
        "stat_q1",
        "stat_q2",
        "stat_q3",
        "stat_variance",
        "stat_energy",
        "stat_zcr",
    ) + tuple(f"band{i}_log_energy" for i in range(10))
    return FeatureVector(values=values, names=names)


def export_features_csv(matrix: np.ndarray, names: Sequence[str], path: str | Path) -> None:
    """Feature matrix to CSV with the feature names as header row."""
    matrix = np.atleast_2d(matrix)
    if matrix.shape[1] != len(names):
        raise ValueError("matrix width must match feature-name count")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names))
        for row in matrix:
            writer.writerow([f"{v:.12g}" for v in row])
