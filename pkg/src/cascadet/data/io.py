"""Dataset directory serialization.

Layout: a directory holding manifest.json (dims, seed, channel names) plus
one flat little-endian float32 blob per field:

  sensors.bin   n * T * D values, row-major
  thermal.bin   n * H * W pixels
  labels.bin    n values
  hotspots.bin  n * 4 values (row0, col0, row1, col1), -1 sentinel if absent
  splits.bin    n values (0 = train, 1 = validation)

Round trips are bitwise lossless because in-memory arrays are float32.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from cascadet.data.types import (
    Dataset,
    HotspotBox,
    LabelClass,
    Sample,
    SensorWindow,
    ThermalFrame,
    TRAIN,
    VALIDATION,
)

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class DatasetFormatError(ValueError):
    """Malformed dataset directory (bad manifest, truncated or mismatched blob)."""


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write the dataset directory; returns the path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    n = len(dataset)
    if n == 0:
        raise ValueError("refusing to save an empty dataset")
    first = dataset.samples[0]
    t, d = first.sensors.values.shape
    h, w = first.thermal.pixels.shape

    sensors = np.stack([s.sensors.values for s in dataset.samples]).astype(_DTYPE)
    thermal = np.stack([s.thermal.pixels for s in dataset.samples]).astype(_DTYPE)
    labels = np.array([int(s.label) for s in dataset.samples], dtype=_DTYPE)
    hotspots = np.full((n, 4), -1.0, dtype=_DTYPE)
    for i, s in enumerate(dataset.samples):
        if s.thermal.hotspot is not None:
            hotspots[i] = s.thermal.hotspot.as_tuple()
    splits = np.array(
        [0.0 if tag == TRAIN else 1.0 for tag in dataset.split], dtype=_DTYPE
    )

    manifest = {
        "format_version": FORMAT_VERSION,
        "n_samples": n,
        "T": t,
        "D": d,
        "H": h,
        "W": w,
        "seed": dataset.seed,
        "channel_names": list(first.sensors.channel_names),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    sensors.tofile(root / "sensors.bin")
    thermal.tofile(root / "thermal.bin")
    labels.tofile(root / "labels.bin")
    hotspots.tofile(root / "hotspots.bin")
    splits.tofile(root / "splits.bin")
    return root


def _read_blob(root: Path, name: str, expected_count: int, what: str) -> np.ndarray:
    blob_path = root / name
    if not blob_path.exists():
        raise DatasetFormatError(f"missing blob {name}")
    raw = blob_path.read_bytes()
    expected_bytes = expected_count * _DTYPE.itemsize
    if len(raw) != expected_bytes:
        raise DatasetFormatError(
            f"{name}: expected {expected_bytes} bytes for {what}, "
            f"file ends at byte offset {len(raw)}"
        )
    return np.frombuffer(raw, dtype=_DTYPE).copy()


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset directory written by save_dataset."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetFormatError(f"no manifest.json in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"manifest.json is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported format_version {version!r} (expected {FORMAT_VERSION})"
        )
    for key in ("n_samples", "T", "D", "H", "W", "seed", "channel_names"):
        if key not in manifest:
            raise DatasetFormatError(f"manifest.json missing key {key!r}")
    n = int(manifest["n_samples"])
    t, d = int(manifest["T"]), int(manifest["D"])
    h, w = int(manifest["H"]), int(manifest["W"])
    channel_names = tuple(manifest["channel_names"])
    if len(channel_names) != d:
        raise DatasetFormatError(
            f"dimension mismatch: manifest declares D={d} but lists "
            f"{len(channel_names)} channel names"
        )

    sensors = _read_blob(root, "sensors.bin", n * t * d, f"{n}x{t}x{d} sensor values")
    thermal = _read_blob(root, "thermal.bin", n * h * w, f"{n}x{h}x{w} thermal pixels")
    labels = _read_blob(root, "labels.bin", n, f"{n} labels")
    hotspots = _read_blob(root, "hotspots.bin", n * 4, f"{n}x4 hotspot boxes")
    splits = _read_blob(root, "splits.bin", n, f"{n} split tags")

    sensors = sensors.reshape(n, t, d)
    thermal = thermal.reshape(n, h, w)
    hotspots = hotspots.reshape(n, 4)

    samples = []
    for i in range(n):
        label_val = int(labels[i])
        if label_val not in (0, 1, 2, 3) or labels[i] != label_val:
            raise DatasetFormatError(f"labels.bin entry {i} is not a valid class: {labels[i]}")
        box = None
        if hotspots[i, 0] >= 0:
            r0, c0, r1, c1 = (int(v) for v in hotspots[i])
            box = HotspotBox(r0, c0, r1, c1)
        samples.append(
            Sample(
                sensors=SensorWindow(values=sensors[i], channel_names=channel_names),
                thermal=ThermalFrame(pixels=thermal[i], hotspot=box),
                label=LabelClass(label_val),
            )
        )
    tags = [TRAIN if v == 0.0 else VALIDATION for v in splits]
    return Dataset(samples=samples, split=tags, seed=int(manifest["seed"]))


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Bitwise equality of two datasets (arrays, labels, hotspots, tags, seed)."""
    if len(a) != len(b) or a.seed != b.seed or a.split != b.split:
        return False
    for sa, sb in zip(a.samples, b.samples):
        if sa.label != sb.label:
            return False
        if sa.sensors.channel_names != sb.sensors.channel_names:
            return False
        if not np.array_equal(sa.sensors.values, sb.sensors.values):
            return False
        if not np.array_equal(sa.thermal.pixels, sb.thermal.pixels):
            return False
        ha, hb = sa.thermal.hotspot, sb.thermal.hotspot
        if (ha is None) != (hb is None):
            return False
        if ha is not None and ha.as_tuple() != hb.as_tuple():
            return False
    return True
