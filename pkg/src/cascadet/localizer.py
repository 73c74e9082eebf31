"""Stage-2 fault localization: attention heatmaps, gradient saliency, IoU scoring.

All maps are computed on normalized [0, 1] thermal inputs and bilinearly
upsampled back to frame resolution. The cascade helper only touches the
thermal encoder when the stage-1 prediction is anomalous; the encoder's call
counter makes that property testable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from cascadet.baselines import ThermalClassifier
from cascadet.data.types import HotspotBox, LabelClass, Sample
from cascadet.neuralkit.tensor import Tensor
from cascadet.preprocess import ThermalNormalizer

SPATIAL_ATTENTION = "spatial_attention"
GRADCAM = "gradcam"
COMBINED = "combined"


@dataclass
class Heatmap:
    values: np.ndarray  # [H x W] in [0, 1]
    source: str
    sample_id: int = -1
    predicted_class: Optional[LabelClass] = None

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("heatmap must be 2-D")
        if self.values.size and (self.values.min() < -1e-9 or self.values.max() > 1 + 1e-9):
            raise ValueError("heatmap values must lie in [0, 1]")

    def argmax_position(self) -> tuple[int, int]:
        idx = int(np.argmax(self.values))
        return idx // self.values.shape[1], idx % self.values.shape[1]


def _bilinear_upsample(
    values: np.ndarray, height: int, width: int, stride: Optional[float] = None
) -> np.ndarray:
    """Upsample a feature-resolution map to frame resolution.

    With a stride, output pixel r samples the map at r / stride (the stacked
    stride-2, pad-1 convolutions center feature cell i on input pixel
    stride * i), which keeps peaks geometrically aligned; otherwise the map
    is corner-aligned to the frame.
    """
    h, w = values.shape
    if (h, w) == (height, width):
        return values.copy()
    if stride is not None:
        rows = np.clip(np.arange(height) / stride, 0.0, h - 1.0)
        cols = np.clip(np.arange(width) / stride, 0.0, w - 1.0)
    else:
        rows = np.linspace(0.0, h - 1.0, height) if h > 1 else np.zeros(height)
        cols = np.linspace(0.0, w - 1.0, width) if w > 1 else np.zeros(width)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = values[np.ix_(r0, c0)] * (1 - fc) + values[np.ix_(r0, c1)] * fc
    bottom = values[np.ix_(r1, c0)] * (1 - fc) + values[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bottom * fr


def _rescale_01(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 0:
        return np.zeros_like(values) if hi <= 0 else np.clip(values, 0.0, 1.0)
    return (values - lo) / (hi - lo)


def spatial_attention_map(model: ThermalClassifier, frame: np.ndarray) -> Heatmap:
    """Sigmoid 1x1-projection attention, upsampled to frame resolution.

    frame is a normalized [H x W] array in [0, 1].
    """
    model.eval_mode()
    enc = model.encoder.encode(frame[None, None, :, :])
    att = enc["attention"].data[0, 0]
    up = _bilinear_upsample(
        att, frame.shape[0], frame.shape[1], stride=model.encoder.total_stride
    )
    return Heatmap(values=np.clip(up, 0.0, 1.0), source=SPATIAL_ATTENTION)


def gradcam(model: ThermalClassifier, frame: np.ndarray, target_class: int) -> Heatmap:
    """Gradient-weighted activation map for the target class.

    Channel weights are the spatial means of d(logit_c)/d(features); the
    weighted channel sum is rectified, min-max rescaled (all-zero maps stay
    zero), and upsampled.
    """
    if not 0 <= int(target_class) <= 3:
        raise ValueError(f"invalid target class {target_class}")
    model.eval_mode()
    enc = model.encoder.encode(frame[None, None, :, :])
    features = enc["features"]
    logits = model.logits_from_encoding(enc)
    seed = np.zeros_like(logits.data)
    seed[0, int(target_class)] = 1.0
    logits.backward(seed)
    grad = features.grad[0]  # [C x H' x W']
    alpha = grad.mean(axis=(1, 2))
    cam = np.maximum((alpha[:, None, None] * features.data[0]).sum(axis=0), 0.0)
    cam = _rescale_01(cam)
    up = np.clip(
        _bilinear_upsample(
            cam, frame.shape[0], frame.shape[1], stride=model.encoder.total_stride
        ),
        0.0,
        1.0,
    )
    return Heatmap(values=up, source=GRADCAM, predicted_class=LabelClass(int(target_class)))


def combined_heatmap(model: ThermalClassifier, frame: np.ndarray, target_class: int) -> Heatmap:
    """Elementwise product of the two maps, re-rescaled to [0, 1]."""
    att = spatial_attention_map(model, frame)
    cam = gradcam(model, frame, target_class)
    product = _rescale_01(att.values) * cam.values
    return Heatmap(
        values=_rescale_01(product),
        source=COMBINED,
        predicted_class=LabelClass(int(target_class)),
    )


def localization_iou(heatmap: Heatmap, hotspot: HotspotBox, quantile: float = 0.9) -> float:
    """IoU between the heatmap's top-quantile mask and the hotspot box."""
    if hotspot is None:
        raise ValueError("sample has no hotspot ground truth")
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    values = heatmap.values
    threshold = float(np.quantile(values, quantile))
    mask = values >= threshold
    box_mask = hotspot.mask(*values.shape)
    intersection = np.count_nonzero(mask & box_mask)
    union = np.count_nonzero(mask | box_mask)
    return float(intersection / union) if union else 0.0


@dataclass
class CascadeResult:
    heatmap: Heatmap
    predicted: LabelClass
    iou: Optional[float] = None


def cascade_localize(
    stage1_predict: Callable[[Sample], LabelClass],
    stage2: ThermalClassifier,
    sample: Sample,
    normalizer: ThermalNormalizer = ThermalNormalizer(),
    quantile: float = 0.9,
) -> Optional[CascadeResult]:
    """Run stage 2 only when stage 1 flags an anomaly.

    Returns None for stage-1-Normal predictions without ever touching the
    thermal encoder; otherwise the combined heatmap tagged with the stage-1
    class, plus the IoU against the generator hotspot when present.
    """
    predicted = stage1_predict(sample)
    if predicted == LabelClass.NORMAL:
        return None
    frame = normalizer.transform_array(sample.thermal.pixels.astype(np.float64))
    heat = combined_heatmap(stage2, frame, int(predicted))
    heat.predicted_class = predicted
    iou = None
    if sample.thermal.hotspot is not None:
        iou = localization_iou(heat, sample.thermal.hotspot, quantile)
    return CascadeResult(heatmap=heat, predicted=predicted, iou=iou)


# ---------------------------------------------------------------------------
# Plot-free exports: PGM grey maps plus a JSON index.
# ---------------------------------------------------------------------------


def write_pgm(heatmap: Heatmap, path: str | Path) -> None:
    """ASCII portable grey map (P2), 8-bit."""
    values = np.round(heatmap.values * 255).astype(int)
    h, w = values.shape
    lines = [f"P2", f"{w} {h}", "255"]
    for row in values:
        lines.append(" ".join(str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_heatmap_index(entries: list[dict], path: str | Path) -> None:
    Path(path).write_text(json.dumps(entries, indent=2) + "\n")
