"""Fusion-audit machinery: modality-bias metric, mutual information,
gradient-to-signal ratio, corruption matrix, and the five-step audit.

The verdict thresholds (bias > 0.1 at p < 0.05, 20-point corruption
asymmetry, rank-tie tolerance) are artifact choices and are config-exposed
on every entry point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np

from cascadet.baselines import FusionModel
from cascadet.evalstat import compute_metrics, one_sample_t_test, spearman_correlation
from cascadet.neuralkit.tensor import cross_entropy

BALANCED = "balanced"
THERMAL_BIASED = "thermal_biased"
SENSOR_BIASED = "sensor_biased"

MI_FLOOR_BITS = 1e-6


@dataclass
class BiasReport:
    mean_gate: float
    std_gate: float
    ideal_gate: float
    bias: float
    t_statistic: float
    p_value: float
    verdict: str
    degenerate: bool = False
    n_gates: int = 0

    def as_dict(self) -> dict:
        return {
            "mean_gate": self.mean_gate,
            "std_gate": self.std_gate,
            "ideal_gate": self.ideal_gate,
            "bias": self.bias,
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
            "verdict": self.verdict,
            "degenerate": self.degenerate,
            "n_gates": self.n_gates,
        }


def ideal_gate(f1_thermal: float, f1_sensor: float) -> float:
    """Performance-proportional gate weight: thermal F1 over the F1 sum."""
    if not (0.0 <= f1_thermal <= 1.0 and 0.0 <= f1_sensor <= 1.0):
        raise ValueError("F1 scores must lie in [0, 1]")
    total = f1_thermal + f1_sensor
    if total == 0.0:
        raise ValueError("both unimodal F1 scores are zero; ideal gate undefined")
    return f1_thermal / total


def modality_bias(
    gates: Sequence[float],
    g_star: float,
    bias_threshold: float = 0.1,
    p_threshold: float = 0.05,
) -> BiasReport:
    """Mean-gate deviation from the ideal gate, with a one-sample t-test."""
    gates = np.asarray(gates, dtype=np.float64)
    if gates.ndim != 1 or gates.shape[0] < 2:
        raise ValueError("need at least 2 gate values")
    test = one_sample_t_test(gates, g_star)
    bias = float(gates.mean() - g_star)
    verdict = BALANCED
    if test.p_value < p_threshold:
        if bias > bias_threshold:
            verdict = THERMAL_BIASED
        elif bias < -bias_threshold:
            verdict = SENSOR_BIASED
    return BiasReport(
        mean_gate=float(gates.mean()),
        std_gate=float(gates.std(ddof=1)),
        ideal_gate=float(g_star),
        bias=bias,
        t_statistic=test.t_statistic,
        p_value=test.p_value,
        verdict=verdict,
        degenerate=test.degenerate,
        n_gates=int(gates.shape[0]),
    )


def mutual_information(
    labels: Sequence[int], features: np.ndarray, n_bins: int = 16
) -> float:
    """Plug-in MI estimate between labels and features, in bits.

    Integer 1-D features are used as categories directly. Continuous features
    are projected onto their first principal direction (multi-dimensional
    input) and quantile-binned into at most n_bins cells.
    """
    labels = np.asarray(labels, dtype=np.int64)
    features = np.asarray(features)
    if labels.ndim != 1 or features.shape[0] != labels.shape[0]:
        raise ValueError("labels and features must share their first dimension")
    if labels.shape[0] < 100:
        warnings.warn("mutual information on < 100 samples is biased upward", stacklevel=2)
    if np.unique(labels).shape[0] < 2:
        warnings.warn("single-class labels: mutual information is 0", stacklevel=2)
        return 0.0

    if features.ndim == 1 and np.issubdtype(features.dtype, np.integer):
        z = features.astype(np.int64)
    else:
        values = features.astype(np.float64)
        if values.ndim == 1:
            projection = values
        else:
            flat = values.reshape(values.shape[0], -1)
            centered = flat - flat.mean(axis=0)
            if centered.shape[1] == 1:
                projection = centered[:, 0]
            else:
                # First right singular vector = first principal direction.
                _, _, vt = np.linalg.svd(centered, full_matrices=False)
                projection = centered @ vt[0]
        edges = np.unique(np.quantile(projection, np.linspace(0, 1, n_bins + 1)[1:-1]))
        z = np.digitize(projection, edges)

    z_values, z_idx = np.unique(z, return_inverse=True)
    joint = np.zeros((4, z_values.shape[0]))
    np.add.at(joint, (labels, z_idx), 1.0)
    joint /= joint.sum()
    p_y = joint.sum(axis=1, keepdims=True)
    p_z = joint.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = joint * np.log2(joint / (p_y * p_z))
    return float(np.nansum(terms))


@dataclass
class GsrReport:
    sensor_grad_norm: float
    thermal_grad_norm: float
    sensor_mi_bits: float
    thermal_mi_bits: float
    rho_sensor: float
    rho_thermal: float
    sensor_mi_floored: bool = False
    thermal_mi_floored: bool = False

    def as_dict(self) -> dict:
        return {
            "sensor_grad_norm": self.sensor_grad_norm,
            "thermal_grad_norm": self.thermal_grad_norm,
            "sensor_mi_bits": self.sensor_mi_bits,
            "thermal_mi_bits": self.thermal_mi_bits,
            "rho_sensor": self.rho_sensor,
            "rho_thermal": self.rho_thermal,
            "sensor_mi_floored": self.sensor_mi_floored,
            "thermal_mi_floored": self.thermal_mi_floored,
        }


def gsr(
    model: FusionModel, xs: np.ndarray, xt: np.ndarray, labels: np.ndarray, n_bins: int = 16
) -> GsrReport:
    """Gradient-to-signal ratio per modality on one labeled batch.

    Gradient norms are taken over each modality encoder's parameters for the
    batch loss; MI comes from the pooled modality context against the labels.
    """
    labels = np.asarray(labels, dtype=np.int64)
    model.eval_mode()
    params = model.parameters()
    for p in params.values():
        p.grad = None
    loss = cross_entropy(model(xs, xt), labels)
    loss.backward()

    def _norm(prefix: str) -> float:
        total = 0.0
        for name, p in params.items():
            if name.startswith(prefix) and p.grad is not None:
                if not np.all(np.isfinite(p.grad)):
                    raise FloatingPointError(f"non-finite gradient in {name}")
                total += float(np.sum(p.grad**2))
        return float(np.sqrt(total))

    sensor_norm = _norm("sensor_encoder.")
    thermal_norm = _norm("thermal_encoder.")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sensor_mi = mutual_information(labels, model.last_forward["sensor_context"], n_bins)
        thermal_mi = mutual_information(labels, model.last_forward["thermal_context"], n_bins)
    sensor_floored = sensor_mi < MI_FLOOR_BITS
    thermal_floored = thermal_mi < MI_FLOOR_BITS
    return GsrReport(
        sensor_grad_norm=sensor_norm,
        thermal_grad_norm=thermal_norm,
        sensor_mi_bits=sensor_mi,
        thermal_mi_bits=thermal_mi,
        rho_sensor=sensor_norm / max(sensor_mi, MI_FLOOR_BITS),
        rho_thermal=thermal_norm / max(thermal_mi, MI_FLOOR_BITS),
        sensor_mi_floored=sensor_floored,
        thermal_mi_floored=thermal_floored,
    )


class ModalityPredictor(Protocol):
    """Anything scoring prepared (sensor, thermal) arrays into class probabilities."""

    def predict_proba(self, xs: np.ndarray, xt: np.ndarray) -> np.ndarray: ...


CORRUPT_NONE = "none"
CORRUPT_THERMAL = "zero_thermal"
CORRUPT_SENSOR = "zero_sensor"
CORRUPTION_MODES = (CORRUPT_NONE, CORRUPT_THERMAL, CORRUPT_SENSOR)


@dataclass
class CorruptionRow:
    model: str
    f1: dict[str, float]

    @property
    def delta_thermal(self) -> float:
        return self.f1[CORRUPT_NONE] - self.f1[CORRUPT_THERMAL]

    @property
    def delta_sensor(self) -> float:
        return self.f1[CORRUPT_NONE] - self.f1[CORRUPT_SENSOR]


def corruption_matrix(
    models: Mapping[str, ModalityPredictor],
    xs: np.ndarray,
    xt: np.ndarray,
    y: np.ndarray,
) -> list[CorruptionRow]:
    """Validation macro F1 per model under none / zero-thermal / zero-sensor."""
    rows = []
    for name, model in models.items():
        scores: dict[str, float] = {}
        for mode in CORRUPTION_MODES:
            xs_c = np.zeros_like(xs) if mode == CORRUPT_SENSOR else xs
            xt_c = np.zeros_like(xt) if mode == CORRUPT_THERMAL else xt
            prob = model.predict_proba(xs_c, xt_c)
            scores[mode] = compute_metrics(y, prob).f1_macro
        rows.append(CorruptionRow(model=name, f1=scores))
    return rows


# ---------------------------------------------------------------------------
# Five-step audit.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditConfig:
    bias_threshold: float = 0.1
    p_threshold: float = 0.05
    fusion_deficit_tolerance: float = 0.02
    rank_tie_tolerance: float = 0.03
    corruption_asymmetry_threshold: float = 0.2


@dataclass
class AuditStep:
    name: str
    flagged: bool
    evidence: dict


@dataclass
class AuditReport:
    steps: list[AuditStep]
    bias: BiasReport

    @property
    def flags(self) -> list[str]:
        return [s.name for s in self.steps if s.flagged]

    def as_dict(self) -> dict:
        return {
            "steps": [
                {"name": s.name, "flagged": s.flagged, "evidence": s.evidence}
                for s in self.steps
            ],
            "bias": self.bias.as_dict(),
            "flags": self.flags,
        }


def audit_protocol(
    gates: Sequence[float],
    f1_sensor: float,
    f1_thermal: float,
    f1_fusion: float,
    sensor_ranking: Sequence[tuple[str, float]],
    expected_top_channel: str,
    fusion_corruption: CorruptionRow,
    config: AuditConfig = AuditConfig(),
) -> AuditReport:
    """Run the five audit steps, each yielding pass/flag with evidence.

    1. gate-weight inspection (bias metric + t-test)
    2. best-unimodal-minus-fusion performance delta
    3. per-modality attribution sanity (does the designated channel rank first)
    4. rank agreement between modality weight and standalone F1
    5. corruption asymmetry
    """
    g_star = ideal_gate(f1_thermal, f1_sensor)
    bias = modality_bias(gates, g_star, config.bias_threshold, config.p_threshold)
    steps = [
        AuditStep(
            name="gate_weights",
            flagged=bias.verdict != BALANCED,
            evidence=bias.as_dict(),
        )
    ]

    best_unimodal = max(f1_sensor, f1_thermal)
    deficit = best_unimodal - f1_fusion
    steps.append(
        AuditStep(
            name="unimodal_vs_fusion",
            flagged=deficit > config.fusion_deficit_tolerance,
            evidence={
                "best_unimodal_f1": best_unimodal,
                "fusion_f1": f1_fusion,
                "deficit": deficit,
            },
        )
    )

    top_channel = sensor_ranking[0][0] if sensor_ranking else ""
    steps.append(
        AuditStep(
            name="per_modality_attributions",
            flagged=top_channel != expected_top_channel,
            evidence={
                "top_channel": top_channel,
                "expected_top_channel": expected_top_channel,
                "ranking": [list(item) for item in sensor_ranking],
            },
        )
    )

    mean_gate = float(np.mean(gates))
    weights = [1.0 - mean_gate, mean_gate]  # sensor, thermal
    f1s = [f1_sensor, f1_thermal]
    if (
        abs(f1s[0] - f1s[1]) < config.rank_tie_tolerance
        or abs(weights[0] - weights[1]) < config.rank_tie_tolerance
    ):
        correlation = 0.0
    else:
        correlation = spearman_correlation(weights, f1s)
    steps.append(
        AuditStep(
            name="weight_vs_performance_rank",
            flagged=correlation < 0.0,
            evidence={
                "modality_weights": {"sensor": weights[0], "thermal": weights[1]},
                "standalone_f1": {"sensor": f1s[0], "thermal": f1s[1]},
                "spearman": correlation,
            },
        )
    )

    asymmetry = abs(fusion_corruption.delta_sensor - fusion_corruption.delta_thermal)
    steps.append(
        AuditStep(
            name="single_modality_degradation",
            flagged=asymmetry > config.corruption_asymmetry_threshold,
            evidence={
                "delta_sensor": fusion_corruption.delta_sensor,
                "delta_thermal": fusion_corruption.delta_thermal,
                "asymmetry": asymmetry,
            },
        )
    )
    return AuditReport(steps=steps, bias=bias)
