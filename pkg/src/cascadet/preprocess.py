"""Normalization, augmentation, noise injection, and modality corruption.

All transforms are pure given an explicit rng and preserve tensor shapes and
labels. Scaler statistics are computed on the training split only; applying a
fitted scaler never updates it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from cascadet.data.types import HotspotBox, Sample, SensorWindow, ThermalFrame

EPS_STD = 1e-8


@dataclass(frozen=True)
class ZScoreScaler:
    """Per-channel z-score statistics fitted on training windows.

    Degenerate (constant) channels get std clamped to EPS_STD and are listed
    in degenerate_channels; their transformed values are exactly zero.
    """

    mean: np.ndarray
    std: np.ndarray
    fitted_on: int
    degenerate_channels: tuple[int, ...] = ()

    def transform(self, window: SensorWindow) -> SensorWindow:
        values = (window.values - self.mean) / self.std
        return SensorWindow(values=values, channel_names=window.channel_names)

    def transform_array(self, windows: np.ndarray) -> np.ndarray:
        """Vectorized transform of stacked [n x T x D] windows."""
        return (windows - self.mean) / self.std

    def inverse_transform(self, window: SensorWindow) -> SensorWindow:
        values = window.values * self.std + self.mean
        return SensorWindow(values=values, channel_names=window.channel_names)


def fit_scaler(train_windows: Sequence[SensorWindow] | np.ndarray) -> ZScoreScaler:
    """Fit per-channel mean/std (population) over every timestep of every window."""
    if isinstance(train_windows, np.ndarray):
        stacked = train_windows
        count = stacked.shape[0] if stacked.ndim == 3 else 1
    else:
        windows = list(train_windows)
        if not windows:
            raise ValueError("cannot fit a scaler on an empty training set")
        stacked = np.stack([w.values for w in windows])
        count = len(windows)
    if stacked.size == 0:
        raise ValueError("cannot fit a scaler on empty data")
    flat = stacked.reshape(-1, stacked.shape[-1]).astype(np.float64)
    if not np.all(np.isfinite(flat)):
        raise ValueError("training windows contain non-finite values")
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    degenerate = tuple(int(i) for i in np.flatnonzero(std <= EPS_STD))
    std = np.where(std <= EPS_STD, EPS_STD, std)
    return ZScoreScaler(mean=mean, std=std, fitted_on=count, degenerate_channels=degenerate)


def apply_scaler(scaler: ZScoreScaler, window: SensorWindow) -> SensorWindow:
    return scaler.transform(window)


@dataclass(frozen=True)
class ThermalNormalizer:
    """Min-max normalization over the camera operating range, clamped to [0, 1]."""

    t_min: float = 20.0
    t_max: float = 120.0

    def __post_init__(self) -> None:
        if self.t_min >= self.t_max:
            raise ValueError("thermal normalizer needs t_min < t_max")

    def transform(self, frame: ThermalFrame) -> ThermalFrame:
        scaled = (frame.pixels - self.t_min) / (self.t_max - self.t_min)
        return ThermalFrame(pixels=np.clip(scaled, 0.0, 1.0), hotspot=frame.hotspot)

    def transform_array(self, frames: np.ndarray) -> np.ndarray:
        return np.clip((frames - self.t_min) / (self.t_max - self.t_min), 0.0, 1.0)


def normalize_thermal(normalizer: ThermalNormalizer, frame: ThermalFrame) -> ThermalFrame:
    return normalizer.transform(frame)


def augment_sensor(
    window: SensorWindow,
    rng: np.random.Generator,
    noise_sigma: float = 0.01,
    warp_prob: float = 0.1,
    sigma_is_variance: bool = True,
) -> SensorWindow:
    """Training-time sensor augmentation: additive Gaussian noise + random time warp.

    noise_sigma follows the N(mean, variance) reading by default, i.e. 0.01
    denotes variance (std 0.1); pass sigma_is_variance=False to treat it as a
    standard deviation directly.
    """
    values = window.values.astype(np.float64, copy=True)
    std = math.sqrt(noise_sigma) if sigma_is_variance else noise_sigma
    if std > 0:
        values += rng.normal(0.0, std, size=values.shape)
    if rng.random() < warp_prob:
        values = _time_warp(values, rng)
    return SensorWindow(values=values, channel_names=window.channel_names)


def _time_warp(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Monotone piecewise-linear warp with one interior knot displaced by up to 20% of T."""
    t = values.shape[0]
    center = (t - 1) / 2.0
    max_shift = 0.2 * t
    shift = rng.uniform(-max_shift, max_shift)
    # Keep the warp monotone: the knot target must stay inside (0, t-1).
    knot = min(max(center + shift, 0.5), t - 1.5)
    out_times = np.arange(t, dtype=np.float64)
    src_times = np.where(
        out_times <= center,
        out_times * (knot / center) if center > 0 else out_times,
        knot + (out_times - center) * ((t - 1 - knot) / (t - 1 - center)),
    )
    idx0 = np.clip(np.floor(src_times).astype(int), 0, t - 1)
    idx1 = np.clip(idx0 + 1, 0, t - 1)
    frac = (src_times - idx0)[:, None]
    return values[idx0] * (1.0 - frac) + values[idx1] * frac


def augment_thermal(
    frame: ThermalFrame,
    rng: np.random.Generator,
    flip_prob: float = 0.5,
    max_rotation_deg: float = 10.0,
    jitter: float = 0.1,
) -> ThermalFrame:
    """Training-time thermal augmentation: flip, small rotation, brightness/contrast jitter.

    The hotspot box is transformed consistently with the pixels (mirror under
    flips, bounding box of rotated corners under rotations).
    """
    pixels = frame.pixels.astype(np.float64, copy=True)
    box = frame.hotspot
    h, w = pixels.shape

    if rng.random() < flip_prob:
        pixels = pixels[:, ::-1].copy()
        if box is not None:
            box = HotspotBox(box.row0, w - box.col1, box.row1, w - box.col0)

    angle_deg = rng.uniform(-max_rotation_deg, max_rotation_deg)
    if angle_deg != 0.0:
        pixels = _rotate_bilinear(pixels, angle_deg)
        if box is not None:
            box = _rotate_box(box, angle_deg, h, w)

    if jitter > 0:
        contrast = rng.uniform(1.0 - jitter, 1.0 + jitter)
        brightness = rng.uniform(1.0 - jitter, 1.0 + jitter)
        mean = pixels.mean()
        pixels = (mean + (pixels - mean) * contrast) * brightness

    return ThermalFrame(pixels=pixels, hotspot=box)


def _rotate_bilinear(pixels: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate about the image center, bilinear resampling, replicate-edge padding."""
    h, w = pixels.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows = np.arange(h, dtype=np.float64)[:, None] - cr
    cols = np.arange(w, dtype=np.float64)[None, :] - cc
    # Inverse mapping: sample the source at the back-rotated output coordinate.
    src_r = cos_t * rows + sin_t * cols + cr
    src_c = -sin_t * rows + cos_t * cols + cc
    src_r = np.clip(src_r, 0.0, h - 1.0)
    src_c = np.clip(src_c, 0.0, w - 1.0)
    r0 = np.floor(src_r).astype(int)
    c0 = np.floor(src_c).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = src_r - r0
    fc = src_c - c0
    top = pixels[r0, c0] * (1 - fc) + pixels[r0, c1] * fc
    bottom = pixels[r1, c0] * (1 - fc) + pixels[r1, c1] * fc
    return top * (1 - fr) + bottom * fr


def _rotate_box(box: HotspotBox, angle_deg: float, h: int, w: int) -> HotspotBox:
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    corners = [
        (box.row0, box.col0),
        (box.row0, box.col1),
        (box.row1, box.col0),
        (box.row1, box.col1),
    ]
    rot_r, rot_c = [], []
    for r, c in corners:
        dr, dc = r - cr, c - cc
        rot_r.append(cos_t * dr - sin_t * dc + cr)
        rot_c.append(sin_t * dr + cos_t * dc + cc)
    r0 = max(int(math.floor(min(rot_r))), 0)
    c0 = max(int(math.floor(min(rot_c))), 0)
    r1 = min(int(math.ceil(max(rot_r))), h)
    c1 = min(int(math.ceil(max(rot_c))), w)
    if r1 <= r0:
        r1 = min(r0 + 1, h)
        r0 = r1 - 1
    if c1 <= c0:
        c1 = min(c0 + 1, w)
        c0 = c1 - 1
    return HotspotBox(r0, c0, r1, c1)


def inject_noise(
    window: SensorWindow, sigma: float, rng: np.random.Generator
) -> SensorWindow:
    """Add i.i.d. N(0, sigma^2) to an already-normalized window; sigma is a std."""
    if sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    if sigma == 0:
        return SensorWindow(
            values=window.values.copy(), channel_names=window.channel_names
        )
    values = window.values + rng.normal(0.0, sigma, size=window.values.shape)
    return SensorWindow(values=values, channel_names=window.channel_names)


def inject_noise_array(
    windows: np.ndarray, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized inject_noise over stacked [n x T x D] normalized windows."""
    if sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    if sigma == 0:
        return windows.copy()
    return windows + rng.normal(0.0, sigma, size=windows.shape)


SENSOR = "sensor"
THERMAL = "thermal"


def corrupt_modality(sample: Sample, which: str) -> Sample:
    """Replace one modality with all-zeros of identical shape; the other is untouched."""
    if which not in (SENSOR, THERMAL):
        raise ValueError(f"unknown modality {which!r}")
    if which == SENSOR:
        sensors = SensorWindow(
            values=np.zeros_like(sample.sensors.values),
            channel_names=sample.sensors.channel_names,
        )
        thermal = sample.thermal
    else:
        sensors = sample.sensors
        thermal = ThermalFrame(
            pixels=np.zeros_like(sample.thermal.pixels), hotspot=sample.thermal.hotspot
        )
    return Sample(sensors=sensors, thermal=thermal, label=sample.label)
