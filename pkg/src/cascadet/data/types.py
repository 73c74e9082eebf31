"""Core domain types for the multimodal monitoring benchmark."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

N_CLASSES = 4

# Class proportions follow the benchmark's published 4-class counts,
# renormalized so the prior vector sums to 1 exactly (the rounded
# percentages 36.8/27.5/27.6/8.0 only sum to 99.9).
_REFERENCE_CLASS_COUNTS = (4836, 3610, 3631, 1044)
DEFAULT_CLASS_PRIORS: tuple[float, float, float, float] = tuple(
    c / sum(_REFERENCE_CLASS_COUNTS) for c in _REFERENCE_CLASS_COUNTS
)

DEFAULT_CHANNEL_NAMES = ("NTC", "PM10", "PM2.5", "PM1.0", "CT1", "CT2", "CT3", "CT4")

# Camera operating range in degrees Celsius; generated pixels are clipped here.
CAMERA_RANGE_C = (20.0, 120.0)


class LabelClass(IntEnum):
    """Equipment state with ordinal severity (Normal < Caution < Warning < Danger)."""

    NORMAL = 0
    CAUTION = 1
    WARNING = 2
    DANGER = 3


@dataclass
class SensorWindow:
    """One sensor time-series window.

    values is a [T x D] float array in raw sensor units; channel_names has
    one identifier per column.
    """

    values: np.ndarray
    channel_names: tuple[str, ...]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError("sensor window must be a 2-D [T x D] array")
        t, d = self.values.shape
        if t < 2:
            raise ValueError(f"sensor window needs T >= 2 timesteps, got {t}")
        if d < 1:
            raise ValueError("sensor window needs at least one channel")
        if len(self.channel_names) != d:
            raise ValueError(
                f"channel_names has {len(self.channel_names)} entries for {d} channels"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sensor window contains non-finite values")

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class HotspotBox:
    """Axis-aligned box (half-open: rows [row0, row1), cols [col0, col1))."""

    row0: int
    col0: int
    row1: int
    col1: int

    def __post_init__(self) -> None:
        if not (self.row0 < self.row1 and self.col0 < self.col1):
            raise ValueError(f"degenerate hotspot box {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.row0, self.col0, self.row1, self.col1)

    @property
    def area(self) -> int:
        return (self.row1 - self.row0) * (self.col1 - self.col0)

    def mask(self, height: int, width: int) -> np.ndarray:
        """Binary [H x W] mask of the box."""
        m = np.zeros((height, width), dtype=bool)
        m[self.row0 : self.row1, self.col0 : self.col1] = True
        return m


@dataclass
class ThermalFrame:
    """One thermal image in degrees Celsius, plus optional hotspot ground truth."""

    pixels: np.ndarray
    hotspot: Optional[HotspotBox] = None

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ValueError("thermal frame must be a 2-D [H x W] array")
        h, w = self.pixels.shape
        if h < 8 or w < 8:
            raise ValueError(f"thermal frame must be at least 8x8, got {h}x{w}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("thermal frame contains non-finite pixels")
        if self.hotspot is not None:
            box = self.hotspot
            if box.row0 < 0 or box.col0 < 0 or box.row1 > h or box.col1 > w:
                raise ValueError(f"hotspot {box.as_tuple()} exceeds frame {h}x{w}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class Sample:
    """One multimodal observation: sensor window + thermal frame + label."""

    sensors: SensorWindow
    thermal: ThermalFrame
    label: LabelClass


TRAIN = "train"
VALIDATION = "validation"


@dataclass
class Dataset:
    """Immutable-by-convention collection of samples with a train/validation split.

    The split is stratified: per-class proportions in the two splits differ
    by less than 2 percentage points, and no sample carries both tags.
    """

    samples: list[Sample]
    split: list[str]
    seed: int

    def __post_init__(self) -> None:
        if len(self.samples) != len(self.split):
            raise ValueError("split tags must parallel samples")
        bad = {tag for tag in self.split} - {TRAIN, VALIDATION}
        if bad:
            raise ValueError(f"unknown split tags: {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, tag: str) -> list[Sample]:
        return [s for s, t in zip(self.samples, self.split) if t == tag]

    @property
    def train_samples(self) -> list[Sample]:
        return self.subset(TRAIN)

    @property
    def validation_samples(self) -> list[Sample]:
        return self.subset(VALIDATION)

    def labels(self) -> np.ndarray:
        return np.array([int(s.label) for s in self.samples], dtype=np.int64)

    def sensor_array(self, tag: Optional[str] = None) -> np.ndarray:
        """Stacked [n x T x D] sensor values (optionally one split only)."""
        samples = self.samples if tag is None else self.subset(tag)
        return np.stack([s.sensors.values for s in samples])

    def thermal_array(self, tag: Optional[str] = None) -> np.ndarray:
        samples = self.samples if tag is None else self.subset(tag)
        return np.stack([s.thermal.pixels for s in samples])


@dataclass
class GeneratorConfig:
    """Knobs for the synthetic multimodal benchmark generator.

    sensor_signal_strength scales the class-dependent mean shift of channel 0
    (in units of that channel's noise std); thermal_signal_strength scales the
    hotspot peak-temperature rise per severity step (degrees C);
    thermal_variance_inflation multiplies thermal pixel noise variance.
    """

    n_samples: int = 2000
    class_priors: Sequence[float] = DEFAULT_CLASS_PRIORS
    T: int = 20
    D: int = 8
    H: int = 48
    W: int = 50
    sensor_signal_strength: float = 0.4
    thermal_signal_strength: float = 3.0
    thermal_variance_inflation: float = 1.0
    danger_spike_rate: float = 0.3
    seed: int = 0
    channel_names: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.n_samples < 40:
            raise ValueError("need n_samples >= 40 to stratify four classes")
        priors = tuple(float(p) for p in self.class_priors)
        if len(priors) != N_CLASSES:
            raise ValueError(f"class_priors must have {N_CLASSES} entries")
        if any(p <= 0 for p in priors):
            raise ValueError("class_priors must be positive")
        if abs(sum(priors) - 1.0) > 1e-9:
            raise ValueError(f"class_priors must sum to 1, got {sum(priors)!r}")
        self.class_priors = priors
        if self.T < 2 or self.D < 1:
            raise ValueError("need T >= 2 and D >= 1")
        if self.H < 8 or self.W < 8:
            raise ValueError("need H, W >= 8")
        if self.sensor_signal_strength < 0 or self.thermal_signal_strength < 0:
            raise ValueError("signal strengths must be >= 0")
        if self.thermal_variance_inflation < 1.0:
            raise ValueError("thermal_variance_inflation must be >= 1")
        if not 0.0 <= self.danger_spike_rate <= 1.0:
            raise ValueError("danger_spike_rate must be a probability")
        if self.channel_names is None:
            if self.D == len(DEFAULT_CHANNEL_NAMES):
                self.channel_names = DEFAULT_CHANNEL_NAMES
            else:
                self.channel_names = tuple(f"ch{i}" for i in range(self.D))
        elif len(self.channel_names) != self.D:
            raise ValueError("channel_names length must equal D")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "class_priors": list(self.class_priors),
            "T": self.T,
            "D": self.D,
            "H": self.H,
            "W": self.W,
            "sensor_signal_strength": self.sensor_signal_strength,
            "thermal_signal_strength": self.thermal_signal_strength,
            "thermal_variance_inflation": self.thermal_variance_inflation,
            "danger_spike_rate": self.danger_spike_rate,
            "seed": self.seed,
            "channel_names": list(self.channel_names),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GeneratorConfig":
        kwargs = dict(payload)
        if "class_priors" in kwargs:
            kwargs["class_priors"] = tuple(kwargs["class_priors"])
        if kwargs.get("channel_names") is not None:
            kwargs["channel_names"] = tuple(kwargs["channel_names"])
        return cls(**kwargs)
