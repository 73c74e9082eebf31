import numpy as np
import pytest

from cascadet.data.types import HotspotBox, Sample, SensorWindow, ThermalFrame, LabelClass
from cascadet.preprocess import (
    SENSOR,
    THERMAL,
    ThermalNormalizer,
    ZScoreScaler,
    apply_scaler,
    augment_sensor,
    augment_thermal,
    corrupt_modality,
    fit_scaler,
    inject_noise,
    inject_noise_array,
    normalize_thermal,
)


def _window(values, names=None):
    values = np.asarray(values, dtype=np.float64)
    names = names or tuple(f"c{i}" for i in range(values.shape[1]))
    return SensorWindow(values=values, channel_names=names)


def test_scaler_zero_mean_unit_std():
    rng = np.random.default_rng(0)
    windows = rng.normal(3.0, 2.5, size=(50, 20, 4))
    scaler = fit_scaler(windows)
    transformed = scaler.transform_array(windows)
    flat = transformed.reshape(-1, 4)
    assert np.max(np.abs(flat.mean(axis=0))) < 1e-7
    assert np.max(np.abs(flat.std(axis=0) - 1.0)) < 1e-7


def test_scaler_known_values():
    scaler = fit_scaler(np.array([[[1.0], [3.0]]]))
    assert scaler.mean[0] == pytest.approx(2.0)
    assert scaler.std[0] == pytest.approx(1.0)
    out = apply_scaler(scaler, _window([[1.0], [3.0]]))
    assert np.allclose(out.values, [[-1.0], [1.0]])


def test_scaler_degenerate_channel_flagged():
    windows = np.stack([np.column_stack([np.full(10, 5.0), np.arange(10.0)])] * 3)
    scaler = fit_scaler(windows)
    assert scaler.degenerate_channels == (0,)
    out = scaler.transform_array(windows)
    assert np.all(out[:, :, 0] == 0.0)


def test_scaler_inverse_identity():
    rng = np.random.default_rng(1)
    windows = rng.normal(size=(10, 8, 3)) * 4 + 2
    scaler = fit_scaler(windows)
    w = _window(windows[0])
    back = scaler.inverse_transform(scaler.transform(w))
    assert np.max(np.abs(back.values - w.values)) < 1e-9


def test_scaler_statistics_ignore_validation_rows():
    train = np.zeros((5, 10, 2)) + 1.0
    scaler = fit_scaler(train)
    val = _window(np.full((10, 2), 50.0))
    out = apply_scaler(scaler, val)
    # validation mean is far from 0: no leakage of validation stats
    assert abs(out.values.mean()) > 1.0
    assert scaler.fitted_on == 5


def test_scaler_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        fit_scaler([])
    with pytest.raises(ValueError):
        fit_scaler(np.array([[[np.inf]]]))


def test_thermal_normalizer_anchors():
    norm = ThermalNormalizer()
    pixels = np.full((8, 8), 20.0)
    pixels[0, 1] = 70.0
    pixels[1, 0] = 120.0
    pixels[1, 1] = 150.0
    out = normalize_thermal(norm, ThermalFrame(pixels=pixels))
    assert out.pixels[0, 0] == pytest.approx(0.0)
    assert out.pixels[0, 1] == pytest.approx(0.5)
    assert out.pixels[1, 0] == pytest.approx(1.0)
    assert out.pixels[1, 1] == pytest.approx(1.0)  # clamped


def test_thermal_normalizer_validates_range():
    with pytest.raises(ValueError):
        ThermalNormalizer(t_min=50.0, t_max=50.0)


def test_augment_sensor_identity():
    rng = np.random.default_rng(2)
    w = _window(np.arange(40.0).reshape(20, 2))
    out = augment_sensor(w, rng, noise_sigma=0.0, warp_prob=0.0)
    assert np.array_equal(out.values, w.values)


def test_augment_sensor_variance_convention():
    rng = np.random.default_rng(3)
    w = _window(np.zeros((100, 100)))
    samples = []
    for _ in range(10):
        samples.append(augment_sensor(w, rng, noise_sigma=0.01, warp_prob=0.0).values)
    std = np.concatenate(samples).std()
    assert std == pytest.approx(0.1, rel=0.05)  # 0.01 read as variance
    samples = [
        augment_sensor(w, rng, noise_sigma=0.01, warp_prob=0.0, sigma_is_variance=False).values
        for _ in range(10)
    ]
    assert np.concatenate(samples).std() == pytest.approx(0.01, rel=0.05)


def test_time_warp_identity_when_knot_unmoved():
    from cascadet.preprocess import _time_warp

    class FixedRng:
        def uniform(self, lo, hi):
            return 0.0

    values = np.arange(60.0).reshape(20, 3)
    out = _time_warp(values, FixedRng())
    assert np.allclose(out, values, atol=1e-12)


def test_time_warp_preserves_shape_and_endpoints():
    rng = np.random.default_rng(4)
    from cascadet.preprocess import _time_warp

    values = np.arange(40.0).reshape(20, 2)
    out = _time_warp(values, rng)
    assert out.shape == values.shape
    assert np.allclose(out[0], values[0])
    assert np.allclose(out[-1], values[-1])


def _frame_with_box():
    pixels = np.full((24, 30), 30.0)
    pixels[6:12, 4:9] = 80.0
    return ThermalFrame(pixels=pixels, hotspot=HotspotBox(6, 4, 12, 9))


def test_augment_thermal_identity():
    rng = np.random.default_rng(5)
    frame = _frame_with_box()
    out = augment_thermal(frame, rng, flip_prob=0.0, max_rotation_deg=0.0, jitter=0.0)
    assert np.array_equal(out.pixels, frame.pixels)
    assert out.hotspot.as_tuple() == frame.hotspot.as_tuple()


def test_flip_twice_is_identity():
    rng = np.random.default_rng(6)
    frame = _frame_with_box()
    once = augment_thermal(frame, _AlwaysFlip(), flip_prob=1.0, max_rotation_deg=0.0, jitter=0.0)
    twice = augment_thermal(once, _AlwaysFlip(), flip_prob=1.0, max_rotation_deg=0.0, jitter=0.0)
    assert np.max(np.abs(twice.pixels - frame.pixels)) < 1e-6
    assert twice.hotspot.as_tuple() == frame.hotspot.as_tuple()


class _AlwaysFlip:
    """rng stub: flip decision fires, rotation angle drawn as 0."""

    def random(self):
        return 0.0

    def uniform(self, lo, hi):
        return 0.0


def test_flip_maps_hotspot_consistently_with_pixels():
    rng = _AlwaysFlip()
    frame = _frame_with_box()
    out = augment_thermal(frame, rng, flip_prob=1.0, max_rotation_deg=0.0, jitter=0.0)
    h, w = frame.pixels.shape
    box = frame.hotspot
    assert out.hotspot.as_tuple() == (box.row0, w - box.col1, box.row1, w - box.col0)
    # hottest pixel moved consistently with the box
    r, c = np.unravel_index(np.argmax(out.pixels), out.pixels.shape)
    assert out.hotspot.row0 <= r < out.hotspot.row1
    assert out.hotspot.col0 <= c < out.hotspot.col1


def test_rotation_keeps_hotspot_over_hot_region():
    rng = np.random.default_rng(8)
    frame = _frame_with_box()
    out = augment_thermal(frame, rng, flip_prob=0.0, max_rotation_deg=10.0, jitter=0.0)
    r, c = np.unravel_index(np.argmax(out.pixels), out.pixels.shape)
    assert out.hotspot.row0 <= r < out.hotspot.row1
    assert out.hotspot.col0 <= c < out.hotspot.col1


def test_inject_noise_zero_identity(rng):
    w = _window(np.ones((20, 3)))
    out = inject_noise(w, 0.0, rng)
    assert np.array_equal(out.values, w.values)


def test_inject_noise_std():
    rng = np.random.default_rng(9)
    w = _window(np.zeros((100, 100)))
    out = inject_noise(w, 0.3, rng)
    assert out.values.std() == pytest.approx(0.3, rel=0.02)


def test_inject_noise_deterministic():
    w = _window(np.zeros((10, 2)))
    a = inject_noise(w, 0.2, np.random.default_rng(42))
    b = inject_noise(w, 0.2, np.random.default_rng(42))
    assert np.array_equal(a.values, b.values)


def test_inject_noise_rejects_negative(rng):
    with pytest.raises(ValueError):
        inject_noise(_window(np.zeros((5, 1))), -0.1, rng)


def test_noise_composes_in_quadrature():
    rng = np.random.default_rng(10)
    base = np.zeros((1, 100000, 1))
    double = inject_noise_array(inject_noise_array(base, 0.1, rng), 0.2, rng)
    single = inject_noise_array(base, np.sqrt(0.01 + 0.04), np.random.default_rng(11))
    assert double.std() == pytest.approx(single.std(), rel=0.03)


def _sample():
    return Sample(
        sensors=_window(np.arange(40.0).reshape(20, 2)),
        thermal=_frame_with_box(),
        label=LabelClass.WARNING,
    )


def test_corrupt_thermal_leaves_sensors_untouched():
    s = _sample()
    out = corrupt_modality(s, THERMAL)
    assert np.array_equal(out.sensors.values, s.sensors.values)
    assert np.all(out.thermal.pixels == 0.0)
    assert out.label == s.label


def test_corrupt_sensor_zeroes_features():
    from cascadet.features import extract_statistical

    out = corrupt_modality(_sample(), SENSOR)
    fv = extract_statistical(out.sensors)
    assert np.all(fv.values == 0.0)


def test_corrupt_both_gives_all_zero_sample():
    out = corrupt_modality(corrupt_modality(_sample(), SENSOR), THERMAL)
    assert np.all(out.sensors.values == 0.0)
    assert np.all(out.thermal.pixels == 0.0)


def test_corrupt_unknown_modality_rejected():
    with pytest.raises(ValueError):
        corrupt_modality(_sample(), "audio")


def test_augmentations_preserve_shape_and_label():
    rng = np.random.default_rng(12)
    s = _sample()
    ws = augment_sensor(s.sensors, rng)
    ft = augment_thermal(s.thermal, rng)
    assert ws.values.shape == s.sensors.values.shape
    assert ft.pixels.shape == s.thermal.pixels.shape
