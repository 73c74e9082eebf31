import numpy as np
import pytest

from cascadet.data.types import SensorWindow
from cascadet.features import (
    FeatureVector,
    VIBRATION_FEATURE_SET,
    export_features_csv,
    extract_statistical,
    extract_statistical_matrix,
    extract_vibration_multidomain,
    fft_radix2,
    ifft_radix2,
    statistical_feature_names,
)


def _window(values, names=None):
    values = np.asarray(values, dtype=np.float64)
    names = names or tuple(f"c{i}" for i in range(values.shape[1]))
    return SensorWindow(values=values, channel_names=names)


def test_constant_channel():
    fv = extract_statistical(_window(np.ones((5, 1))))
    assert np.allclose(fv.values, [1.0, 0.0, 1.0, 1.0])


def test_known_channel_population_std():
    fv = extract_statistical(_window(np.array([[1.0], [2.0], [3.0]])))
    assert fv.values[0] == pytest.approx(2.0)
    assert fv.values[1] == pytest.approx(0.816497, abs=1e-6)
    assert fv.values[2] == pytest.approx(1.0)
    assert fv.values[3] == pytest.approx(3.0)


def test_32_features_in_declared_order():
    rng = np.random.default_rng(0)
    names = ("NTC", "PM10", "PM2.5", "PM1.0", "CT1", "CT2", "CT3", "CT4")
    fv = extract_statistical(_window(rng.normal(size=(20, 8)), names))
    assert len(fv.values) == 32
    assert fv.names[:4] == ("NTC_mean", "NTC_std", "NTC_min", "NTC_max")
    assert fv.names[-4:] == ("CT4_mean", "CT4_std", "CT4_min", "CT4_max")


def test_matrix_matches_single(rng):
    windows = rng.normal(size=(6, 10, 3))
    names = ("a", "b", "c")
    matrix, out_names = extract_statistical_matrix(windows, names)
    for i in range(6):
        fv = extract_statistical(_window(windows[i], names))
        assert np.allclose(matrix[i], fv.values)
        assert out_names == fv.names


def test_shift_covariance(rng):
    base = rng.normal(size=(12, 2))
    fv0 = extract_statistical(_window(base))
    fv1 = extract_statistical(_window(base + 5.0))
    # mean/min/max shift by c, std unchanged
    assert np.allclose(fv1.values[0::4], fv0.values[0::4] + 5.0)
    assert np.allclose(fv1.values[1::4], fv0.values[1::4])
    assert np.allclose(fv1.values[2::4], fv0.values[2::4] + 5.0)
    assert np.allclose(fv1.values[3::4], fv0.values[3::4] + 5.0)


def test_scale_covariance(rng):
    base = rng.normal(size=(12, 2))
    fv0 = extract_statistical(_window(base))
    fv2 = extract_statistical(_window(base * 3.0))
    assert np.allclose(fv2.values, fv0.values * 3.0)


def test_permutation_invariance(rng):
    base = rng.normal(size=(15, 3))
    fv0 = extract_statistical(_window(base))
    fv1 = extract_statistical(_window(base[rng.permutation(15)]))
    assert np.allclose(fv0.values, fv1.values)


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        extract_statistical(_window(np.array([[1.0], [np.inf]])))


def test_feature_vector_parallel_names():
    with pytest.raises(ValueError):
        FeatureVector(values=np.zeros(3), names=("a", "b"))


# -- radix-2 transform -------------------------------------------------------


def _dft_bruteforce(x):
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * k * m / n)) for m in range(n)])


def test_fft_matches_bruteforce_dft(rng):
    for n in (1, 2, 8, 64):
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        assert np.max(np.abs(fft_radix2(x) - _dft_bruteforce(x))) < 1e-9


def test_fft_roundtrip(rng):
    for n in (2, 16, 256, 1024):
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        assert np.max(np.abs(ifft_radix2(fft_radix2(x)) - x)) < 1e-9


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        fft_radix2(np.zeros(12))


# -- vibration features ------------------------------------------------------


def test_sine_crest_and_rms():
    t = np.arange(1024)
    sine = np.sin(2 * np.pi * 8 * t / 1024)
    fv = extract_vibration_multidomain(sine, sample_rate=1024.0)
    vals = dict(zip(fv.names, fv.values))
    assert vals["time_crest"] == pytest.approx(np.sqrt(2.0), abs=1e-3)
    assert vals["time_rms"] == pytest.approx(np.sqrt(0.5), abs=1e-3)
    assert vals["freq_peak_hz"] == pytest.approx(8.0, abs=0.5)


def test_alternating_signal_zero_crossing_rate():
    alt = np.array([1.0, -1.0] * 64)
    fv = extract_vibration_multidomain(alt, sample_rate=100.0)
    assert dict(zip(fv.names, fv.values))["stat_zcr"] == pytest.approx(1.0)


def test_gaussian_kurtosis_non_excess():
    g = np.random.default_rng(5).normal(size=100000)
    fv = extract_vibration_multidomain(g, sample_rate=1.0)
    assert dict(zip(fv.names, fv.values))["time_kurtosis"] == pytest.approx(3.0, abs=0.1)


def test_exactly_32_vibration_features():
    fv = extract_vibration_multidomain(np.sin(np.linspace(0, 30, 200)), sample_rate=10.0)
    assert len(fv.values) == 32
    assert len(set(fv.names)) == 32
    assert VIBRATION_FEATURE_SET == "artifact feature set v1"


def test_vibration_errors():
    with pytest.raises(ValueError, match="64"):
        extract_vibration_multidomain(np.ones(10), 1.0)
    with pytest.raises(ValueError, match="zero-energy"):
        extract_vibration_multidomain(np.zeros(128), 1.0)
    with pytest.raises(ValueError, match="constant"):
        extract_vibration_multidomain(np.full(128, 2.0), 1.0)


def test_envelope_spectrum_detects_modulation():
    # Amplitude-modulated carrier: the envelope spectrum peaks at the
    # modulation frequency, not the carrier.
    fs = 2048.0
    t = np.arange(2048) / fs
    carrier, modulation = 200.0, 20.0
    x = (1.0 + 0.8 * np.sin(2 * np.pi * modulation * t)) * np.sin(2 * np.pi * carrier * t)
    fv = extract_vibration_multidomain(x, sample_rate=fs)
    vals = dict(zip(fv.names, fv.values))
    assert vals["freq_peak_hz"] == pytest.approx(carrier, abs=2.0)
    assert vals["env_peak_hz"] == pytest.approx(modulation, abs=2.0)


def test_export_csv_header(tmp_path, rng):
    matrix, names = extract_statistical_matrix(rng.normal(size=(3, 5, 2)), ("a", "b"))
    path = tmp_path / "features.csv"
    export_features_csv(matrix, names, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ",".join(names)
    assert len(lines) == 4
