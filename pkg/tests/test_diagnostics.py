import warnings

import numpy as np
import pytest

from cascadet.diagnostics import (
    AuditConfig,
    BALANCED,
    CorruptionRow,
    SENSOR_BIASED,
    THERMAL_BIASED,
    audit_protocol,
    corruption_matrix,
    gsr,
    ideal_gate,
    modality_bias,
    mutual_information,
)


def test_ideal_gate_reference_case():
    assert ideal_gate(0.2879, 0.9466) == pytest.approx(0.233, abs=5e-4)


def test_ideal_gate_symmetry_and_zero():
    assert ideal_gate(0.5, 0.5) == pytest.approx(0.5)
    assert ideal_gate(0.0, 0.7) == 0.0
    with pytest.raises(ValueError):
        ideal_gate(0.0, 0.0)
    with pytest.raises(ValueError):
        ideal_gate(1.2, 0.5)


def test_bias_reference_arithmetic():
    gates = np.full(100, 0.76)
    gates[0] = 0.76 + 1e-9  # avoid a fully degenerate sd
    report = modality_bias(gates, 0.233)
    assert report.bias == pytest.approx(0.76 - 0.233, abs=1e-3)
    assert report.bias == pytest.approx(0.527, abs=1e-3)


def test_bias_exactly_linear_in_gate_shift(rng):
    gates = rng.normal(0.5, 0.05, size=200)
    a = modality_bias(gates, 0.3)
    b = modality_bias(gates + 0.1, 0.3)
    assert b.bias == pytest.approx(a.bias + 0.1, abs=1e-12)


def test_bias_degenerate_gates_equal_gstar():
    report = modality_bias([0.4, 0.4, 0.4], 0.4)
    assert abs(report.bias) < 1e-12
    assert report.t_statistic == 0.0
    assert report.p_value == 1.0
    assert report.degenerate
    assert report.verdict == BALANCED


def test_bias_thermal_verdict_from_gaussian_gates():
    gates = np.random.default_rng(0).normal(0.76, 0.11, size=1000)
    report = modality_bias(gates, 0.233)
    assert report.p_value < 0.001
    assert report.verdict == THERMAL_BIASED


def test_bias_sensor_verdict():
    gates = np.random.default_rng(1).normal(0.1, 0.05, size=500)
    report = modality_bias(gates, 0.5)
    assert report.verdict == SENSOR_BIASED


def test_mi_exact_copies():
    labels = np.arange(100000) % 2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert mutual_information(labels, labels.astype(np.int64)) == pytest.approx(1.0, abs=1e-9)
    labels4 = np.arange(100000) % 4
    assert mutual_information(labels4, labels4.astype(np.int64)) == pytest.approx(2.0, abs=1e-9)


def test_mi_independent_near_zero():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 4, size=100000)
    feature = rng.normal(size=100000)
    assert mutual_information(labels, feature) <= 0.02


def test_mi_single_class_zero_with_warning():
    with pytest.warns(UserWarning, match="single-class"):
        assert mutual_information(np.zeros(200, dtype=np.int64), np.arange(200.0)) == 0.0


def test_mi_small_sample_warning():
    with pytest.warns(UserWarning, match="100 samples"):
        mutual_information(np.array([0, 1] * 10), np.arange(20.0))


def test_mi_permutation_invariant_and_nonnegative(rng):
    labels = rng.integers(0, 4, size=5000)
    feats = rng.normal(size=(5000, 3)) + labels[:, None] * 0.5
    a = mutual_information(labels, feats)
    perm = rng.permutation(5000)
    b = mutual_information(labels[perm], feats[perm])
    assert a == pytest.approx(b, abs=1e-12)
    assert a >= 0.0


def test_mi_monotone_in_sensor_signal_strength():
    from cascadet.baselines import prepare_data
    from cascadet.data.generator import generate_dataset
    from cascadet.data.types import GeneratorConfig
    from cascadet.features import extract_statistical_matrix

    estimates = []
    for strength in (0.0, 0.4, 1.2):
        cfg = GeneratorConfig(n_samples=1200, seed=17, sensor_signal_strength=strength)
        ds = generate_dataset(cfg)
        prep = prepare_data(ds)
        feats, _ = extract_statistical_matrix(prep.xs_train, cfg.channel_names)
        estimates.append(mutual_information(prep.y_train, feats))
    assert estimates[0] <= estimates[1] + 1e-9
    assert estimates[1] <= estimates[2] + 1e-9


# -- GSR -----------------------------------------------------------------------


def _tiny_fusion_setup():
    from cascadet.baselines import FusionModel
    from cascadet.data.generator import generate_dataset
    from cascadet.data.types import GeneratorConfig
    from cascadet.baselines import prepare_data

    ds = generate_dataset(GeneratorConfig(n_samples=120, seed=23))
    prep = prepare_data(ds)
    model = FusionModel(prep.xs_train.shape[2], seed=2)
    return model, prep


def test_gsr_fields_nonnegative():
    model, prep = _tiny_fusion_setup()
    report = gsr(model, prep.xs_val[:30], prep.xt_val[:30], prep.y_val[:30])
    d = report.as_dict()
    for key in ("sensor_grad_norm", "thermal_grad_norm", "rho_sensor", "rho_thermal"):
        assert d[key] >= 0.0


def test_gsr_zero_gradient_batch_gives_zero_norms():
    model, prep = _tiny_fusion_setup()
    # Saturate the head so every sample is classified with probability
    # numerically exactly 1: the loss gradient underflows to zero.
    model.eval_mode()
    xs, xt = prep.xs_val[:8], prep.xt_val[:8]
    probs = model.predict_proba(xs, xt)
    y = probs.argmax(axis=1)  # label = current prediction -> loss ~ 0 after scaling
    model.head.weight.data *= 5e4
    model.head.bias.data *= 5e4
    report = gsr(model, xs, xt, y)
    assert report.sensor_grad_norm == 0.0
    assert report.thermal_grad_norm == 0.0
    assert report.rho_sensor == 0.0
    assert report.rho_thermal == 0.0


# -- corruption matrix ----------------------------------------------------------


class _StubModel:
    """Predicts from the sensor mean sign; ignores thermal entirely."""

    def predict_proba(self, xs, xt):
        n = xs.shape[0]
        out = np.full((n, 4), 0.05)
        hot = (xs.mean(axis=(1, 2)) > 0).astype(int)
        out[np.arange(n), hot] = 0.85
        return out


def test_corruption_matrix_sensor_only_model():
    rng = np.random.default_rng(3)
    xs = rng.normal(size=(40, 5, 2))
    xt = rng.normal(size=(40, 1, 8, 8))
    y = (xs.mean(axis=(1, 2)) > 0).astype(np.int64)
    y[:4] = [0, 1, 2, 3]
    rows = corruption_matrix({"stub": _StubModel()}, xs, xt, y)
    assert rows[0].delta_thermal == 0.0
    assert rows[0].f1["zero_sensor"] != rows[0].f1["none"]


# -- audit protocol --------------------------------------------------------------


def _fusion_corruption(delta_thermal, delta_sensor, base=0.8):
    return CorruptionRow(
        model="fusion",
        f1={
            "none": base,
            "zero_thermal": base - delta_thermal,
            "zero_sensor": base - delta_sensor,
        },
    )


def test_audit_flags_in_asymmetric_regime():
    gates = np.random.default_rng(4).normal(0.78, 0.08, size=300)
    report = audit_protocol(
        gates=gates,
        f1_sensor=0.94,
        f1_thermal=0.30,
        f1_fusion=0.82,
        sensor_ranking=[("NTC", 0.5), ("PM10", 0.3)],
        expected_top_channel="NTC",
        fusion_corruption=_fusion_corruption(0.02, 0.60),
    )
    flagged = {s.name for s in report.steps if s.flagged}
    assert flagged == {
        "gate_weights",
        "unimodal_vs_fusion",
        "weight_vs_performance_rank",
        "single_modality_degradation",
    }
    assert len(report.steps) == 5


def test_audit_clean_in_symmetric_regime():
    gates = np.random.default_rng(5).normal(0.5, 0.02, size=300)
    report = audit_protocol(
        gates=gates,
        f1_sensor=0.62,
        f1_thermal=0.61,
        f1_fusion=0.70,
        sensor_ranking=[("NTC", 0.5), ("PM10", 0.3)],
        expected_top_channel="NTC",
        fusion_corruption=_fusion_corruption(0.10, 0.12, base=0.70),
    )
    assert report.flags == []


def test_audit_attribution_step_flags_wrong_top_channel():
    gates = np.random.default_rng(6).normal(0.5, 0.02, size=100)
    report = audit_protocol(
        gates=gates,
        f1_sensor=0.6,
        f1_thermal=0.6,
        f1_fusion=0.65,
        sensor_ranking=[("CT1", 0.5), ("NTC", 0.3)],
        expected_top_channel="NTC",
        fusion_corruption=_fusion_corruption(0.05, 0.05),
    )
    assert "per_modality_attributions" in report.flags


def test_audit_deterministic():
    gates = list(np.random.default_rng(7).normal(0.7, 0.1, size=50))
    kwargs = dict(
        gates=gates,
        f1_sensor=0.9,
        f1_thermal=0.4,
        f1_fusion=0.8,
        sensor_ranking=[("NTC", 0.5)],
        expected_top_channel="NTC",
        fusion_corruption=_fusion_corruption(0.01, 0.5),
    )
    a = audit_protocol(**kwargs)
    b = audit_protocol(**kwargs)
    assert a.as_dict() == b.as_dict()


def test_audit_rank_tie_tolerance():
    # Near-equal unimodal F1s: the rank step must not flag on noise.
    gates = np.random.default_rng(8).normal(0.52, 0.02, size=200)
    report = audit_protocol(
        gates=gates,
        f1_sensor=0.605,
        f1_thermal=0.600,
        f1_fusion=0.66,
        sensor_ranking=[("NTC", 0.5)],
        expected_top_channel="NTC",
        fusion_corruption=_fusion_corruption(0.05, 0.06),
        config=AuditConfig(rank_tie_tolerance=0.03),
    )
    step = next(s for s in report.steps if s.name == "weight_vs_performance_rank")
    assert not step.flagged
