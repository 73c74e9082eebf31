"""Synthetic multimodal benchmark generator.

Stand-in for the (non-distributable) production dataset: same schema, fully
deterministic given a config, with controllable class signal per modality.

Sensor channel structure (class k in 0..3, channel noise std s_d):
  * channel 0 ("NTC-like"): mean shifts by k * sensor_signal_strength * s_0
  * channels 1-2 ("PM-like"): step-noise std inflates with severity (factor
    1 + 0.45k) on top of a large class-independent per-window offset; the
    offset dominates the pooled variance, so after z-scoring the class signal
    lives in the small within-window variance, not in the window mean
  * channel 3: weak secondary mean shift (0.3 * sensor_signal_strength * k * s_3)
  * channels 4+ ("CT-like"): Danger samples get transient spikes at
    danger_spike_rate per timestep

Thermal frames: planar ambient gradient plus exactly one Gaussian warm blob
per frame. Anomalous frames record the blob's box as hotspot ground truth and
the blob peak rises by thermal_signal_strength degrees per severity step;
Normal frames carry a benign blob with no ground-truth box, so blob presence
alone does not separate the classes.
"""

from __future__ import annotations

import math

import numpy as np

from cascadet.data.types import (
    CAMERA_RANGE_C,
    N_CLASSES,
    Dataset,
    GeneratorConfig,
    HotspotBox,
    LabelClass,
    Sample,
    SensorWindow,
    ThermalFrame,
    TRAIN,
    VALIDATION,
)

_BASE_LEVELS = (40.0, 25.0, 18.0, 12.0, 5.0, 5.0, 5.0, 5.0)
_NOISE_STD = (1.0, 0.5, 0.5, 0.7, 0.5, 0.5, 0.5, 0.5)
# Every class-dependent sensor effect scales with sensor_signal_strength so
# that strength 0 makes labels exactly independent of the inputs; the
# per-strength slopes below put the default strength (0.4) at a variance
# factor of 1 + 0.45k and unit spike amplitude.
_PM_VARIANCE_SLOPE_PER_STRENGTH = 1.125
_SPIKE_AMP_PER_STRENGTH = 2.5
_PM_OFFSET_STD = 2.0
_SECONDARY_SHIFT = 0.3
_BLOB_BASE_AMP = 8.0
_BLOB_AMP_NOISE = 2.0
# Per-class blob amplitude factors (scaled by thermal_signal_strength): the
# severity ordering is monotone but the rise concentrates in Danger, whose
# detection the sensor spikes already cover. Thermal therefore adds almost no
# marginal detection value over sensors (the asymmetry the corruption
# experiments probe) while still giving the stage-2 localizer a strong
# intensity signal to learn from.
_CLASS_AMP_FACTORS = (0.0, 0.2, 0.4, 3.0)
_THERMAL_NOISE_STD = 1.2
_AMBIENT_C = 35.0


def _channel_params(d: int) -> tuple[np.ndarray, np.ndarray]:
    base = np.array([_BASE_LEVELS[i] if i < len(_BASE_LEVELS) else 5.0 for i in range(d)])
    std = np.array([_NOISE_STD[i] if i < len(_NOISE_STD) else 0.5 for i in range(d)])
    return base, std


def _apportion_counts(priors: tuple[float, ...], n: int) -> np.ndarray:
    """Largest-remainder apportionment so realized frequencies track priors."""
    raw = np.array(priors) * n
    counts = np.floor(raw).astype(int)
    remainder = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


def _sensor_window(cfg: GeneratorConfig, label: int, rng: np.random.Generator) -> np.ndarray:
    base, std = _channel_params(cfg.D)
    noise_scale = std.copy()
    strength = cfg.sensor_signal_strength
    for ch in (1, 2):
        if ch < cfg.D:
            noise_scale[ch] = std[ch] * (1.0 + _PM_VARIANCE_SLOPE_PER_STRENGTH * strength * label)
    values = base[None, :] + rng.normal(0.0, 1.0, size=(cfg.T, cfg.D)) * noise_scale[None, :]
    values[:, 0] += label * strength * std[0]
    for ch in (1, 2):
        if ch < cfg.D:
            values[:, ch] += rng.normal(0.0, _PM_OFFSET_STD)
    if cfg.D > 3:
        values[:, 3] += _SECONDARY_SHIFT * strength * label * std[3]
    spike_channels = range(4, cfg.D)
    if label == int(LabelClass.DANGER):
        for ch in spike_channels:
            hits = rng.random(cfg.T) < cfg.danger_spike_rate
            amps = rng.uniform(3.0, 6.0, size=cfg.T) * std[ch] * _SPIKE_AMP_PER_STRENGTH * strength
            values[hits, ch] += amps[hits]
    return values


def _thermal_frame(
    cfg: GeneratorConfig, label: int, rng: np.random.Generator
) -> tuple[np.ndarray, HotspotBox | None]:
    h, w = cfg.H, cfg.W
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    gx, gy = rng.uniform(-2.5, 2.5, size=2)
    background = _AMBIENT_C + gx * (cols / w - 0.5) * 2.0 + gy * (rows / h - 0.5) * 2.0

    sigma = 0.104 * min(h, w) * rng.uniform(0.9, 1.1)
    half = int(round(1.7 * sigma))
    margin = half + 1
    cr = int(rng.integers(margin, h - margin))
    cc = int(rng.integers(margin, w - margin))
    # Benign and anomalous blobs share the amplitude law so that at zero
    # thermal signal strength the pixel distribution is label-independent.
    amp = max(
        _BLOB_BASE_AMP
        + cfg.thermal_signal_strength * _CLASS_AMP_FACTORS[label]
        + rng.normal(0.0, _BLOB_AMP_NOISE),
        1.0,
    )
    if label == int(LabelClass.NORMAL):
        box = None
    else:
        box = HotspotBox(
            row0=max(cr - half, 0),
            col0=max(cc - half, 0),
            row1=min(cr + half + 1, h),
            col1=min(cc + half + 1, w),
        )
    blob = amp * np.exp(-(((rows - cr) ** 2) + ((cols - cc) ** 2)) / (2.0 * sigma**2))

    noise_std = _THERMAL_NOISE_STD * math.sqrt(cfg.thermal_variance_inflation)
    pixels = background + blob + rng.normal(0.0, noise_std, size=(h, w))
    np.clip(pixels, CAMERA_RANGE_C[0], CAMERA_RANGE_C[1], out=pixels)
    return pixels, box


def generate_dataset(config: GeneratorConfig, fraction_train: float = 0.85) -> Dataset:
    """Generate a dataset deterministically from the config (including seed)."""
    rng = np.random.default_rng(config.seed)
    counts = _apportion_counts(tuple(config.class_priors), config.n_samples)
    labels = np.repeat(np.arange(N_CLASSES), counts)
    labels = labels[rng.permutation(config.n_samples)]

    samples: list[Sample] = []
    for label in labels:
        window = _sensor_window(config, int(label), rng).astype(np.float32)
        pixels, box = _thermal_frame(config, int(label), rng)
        samples.append(
            Sample(
                sensors=SensorWindow(values=window, channel_names=config.channel_names),
                thermal=ThermalFrame(pixels=pixels.astype(np.float32), hotspot=box),
                label=LabelClass(int(label)),
            )
        )

    dataset = Dataset(samples=samples, split=[TRAIN] * len(samples), seed=config.seed)
    return stratified_split(dataset, fraction_train, config.seed)


def stratified_split(dataset: Dataset, fraction_train: float, seed: int) -> Dataset:
    """Reassign train/validation tags, stratified by class.

    Per class, round(fraction_train * n_c) samples go to train (clamped so
    both sides keep at least one sample). Deterministic given the seed.
    """
    if not 0.0 < fraction_train < 1.0:
        raise ValueError("fraction_train must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    labels = dataset.labels()
    tags = [""] * len(dataset)
    for cls in range(N_CLASSES):
        idx = np.flatnonzero(labels == cls)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise ValueError(f"class {cls} has {idx.size} sample(s); cannot stratify")
        idx = idx[rng.permutation(idx.size)]
        n_train = int(round(fraction_train * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        for i in idx[:n_train]:
            tags[i] = TRAIN
        for i in idx[n_train:]:
            tags[i] = VALIDATION
    return Dataset(samples=dataset.samples, split=tags, seed=dataset.seed)
