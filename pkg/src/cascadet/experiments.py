"""Experiment harness: trains the model zoo and runs the report suites.

Every experiment is a pure function of its config (generator settings, seeds,
grids), emits deterministic CSV/JSON artifacts, and records its asserted
qualitative verdicts so the CLI can exit nonzero when one fails. Replaying a
report's embedded config reproduces its metric CSVs byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import shutil
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from cascadet.baselines import (
    AugmentConfig,
    FusionModel,
    LateFusion,
    PreparedData,
    SequenceClassifier,
    ThermalClassifier,
    prepare_data,
    train_fusion,
    train_sequence,
    train_thermal,
)
from cascadet.data.generator import generate_dataset, stratified_split
from cascadet.data.io import load_dataset
from cascadet.data.types import Dataset, GeneratorConfig, LabelClass, Sample, TRAIN, VALIDATION
from cascadet.diagnostics import (
    AuditConfig,
    AuditReport,
    CorruptionRow,
    audit_protocol,
    corruption_matrix,
    gsr,
)
from cascadet.evalstat import (
    MetricsRow,
    SignificanceRow,
    compare_paired,
    compute_metrics,
    write_significance_csv,
)
from cascadet.features import extract_statistical_matrix, statistical_feature_names
from cascadet.forest import Forest, ForestConfig, fit_forest, predict_batch, predict_proba_batch
from cascadet.localizer import (
    cascade_localize,
    combined_heatmap,
    localization_iou,
    write_heatmap_index,
    write_pgm,
)
from cascadet.neuralkit.training import TrainConfig, TrainingHistory
from cascadet.preprocess import inject_noise_array
from cascadet.treeshap import TreeShapExplainer, aggregate_by_sensor

DEFAULT_SEEDS = (42, 123, 456, 789, 1024)
DEFAULT_SIGMA_GRID = (0.0, 0.05, 0.1, 0.15, 0.2, 0.3)
DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.5, 0.8, 1.0)

RF = "rf"
SEQUENCE = "sequence"
THERMAL = "thermal"
FUSION = "fusion"
LATE_FUSION = "late_fusion"
MODEL_ORDER = (RF, SEQUENCE, THERMAL, FUSION, LATE_FUSION)

ORDERING_TOLERANCE = 0.02


# ---------------------------------------------------------------------------
# Predictor adapters: a uniform predict_proba(xs, xt) over prepared arrays.
# ---------------------------------------------------------------------------


@dataclass
class ForestPredictor:
    """Stage-1 pipeline on normalized windows: statistical features -> forest."""

    forest: Forest
    channel_names: tuple[str, ...]

    def _features(self, xs: np.ndarray) -> np.ndarray:
        x, _ = extract_statistical_matrix(xs, self.channel_names)
        return x

    def predict_proba(self, xs: np.ndarray, xt: np.ndarray | None = None) -> np.ndarray:
        return predict_proba_batch(self.forest, self._features(xs))

    def predict_labels(self, xs: np.ndarray) -> np.ndarray:
        return predict_batch(self.forest, self._features(xs))


@dataclass
class SequencePredictor:
    model: SequenceClassifier

    def predict_proba(self, xs: np.ndarray, xt: np.ndarray | None = None) -> np.ndarray:
        return _chunked(lambda a: self.model.predict_proba(a), xs)


@dataclass
class ThermalPredictor:
    model: ThermalClassifier

    def predict_proba(self, xs: np.ndarray, xt: np.ndarray | None = None) -> np.ndarray:
        return _chunked(lambda a: self.model.predict_proba(a), xt)


@dataclass
class FusionPredictor:
    model: FusionModel

    def predict_proba(self, xs: np.ndarray, xt: np.ndarray) -> np.ndarray:
        out = []
        for start in range(0, xs.shape[0], 256):
            out.append(self.model.predict_proba(xs[start : start + 256], xt[start : start + 256]))
        return np.concatenate(out, axis=0)


@dataclass
class LateFusionPredictor:
    model: LateFusion

    def predict_proba(self, xs: np.ndarray, xt: np.ndarray) -> np.ndarray:
        return 0.5 * (
            _chunked(lambda a: self.model.sequence.predict_proba(a), xs)
            + _chunked(lambda a: self.model.thermal.predict_proba(a), xt)
        )


def _chunked(fn: Callable[[np.ndarray], np.ndarray], arr: np.ndarray, size: int = 256) -> np.ndarray:
    return np.concatenate([fn(arr[i : i + size]) for i in range(0, arr.shape[0], size)], axis=0)


# ---------------------------------------------------------------------------
# One trained cell = every model for one seed on one prepared dataset.
# ---------------------------------------------------------------------------


@dataclass
class SeedCell:
    seed: int
    rf: ForestPredictor
    sequence: SequencePredictor
    thermal: ThermalPredictor
    fusion: FusionPredictor
    late_fusion: LateFusionPredictor
    metrics: dict[str, MetricsRow]
    histories: dict[str, TrainingHistory]

    def predictors(self) -> dict[str, object]:
        return {
            RF: self.rf,
            SEQUENCE: self.sequence,
            THERMAL: self.thermal,
            FUSION: self.fusion,
            LATE_FUSION: self.late_fusion,
        }


def train_cell(
    prep: PreparedData,
    seed: int,
    train_config: Optional[TrainConfig] = None,
    augment: AugmentConfig = AugmentConfig(),
    forest_config: Optional[ForestConfig] = None,
) -> SeedCell:
    """Train the full model zoo for one seed; late fusion reuses the unimodal pair."""
    cfg = train_config or TrainConfig(seed=seed)
    cfg = TrainConfig(
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        base_lr=cfg.base_lr,
        weight_decay=cfg.weight_decay,
        seed=seed,
    )
    f_cfg = forest_config or ForestConfig(seed=seed)
    if f_cfg.seed != seed:
        f_cfg = ForestConfig(
            n_trees=f_cfg.n_trees,
            max_depth=f_cfg.max_depth,
            min_samples_leaf=f_cfg.min_samples_leaf,
            features_per_split=f_cfg.features_per_split,
            seed=seed,
        )

    x_train, _ = extract_statistical_matrix(prep.xs_train, prep.channel_names)
    forest = fit_forest(x_train, prep.y_train, f_cfg)
    rf = ForestPredictor(forest=forest, channel_names=prep.channel_names)

    seq_model, seq_hist = train_sequence(prep, seed, cfg, augment)
    th_model, th_hist = train_thermal(prep, seed, cfg, augment)
    fu_model, fu_hist = train_fusion(prep, seed, cfg, augment)
    late = LateFusion(sequence=seq_model, thermal=th_model)

    cell = SeedCell(
        seed=seed,
        rf=rf,
        sequence=SequencePredictor(seq_model),
        thermal=ThermalPredictor(th_model),
        fusion=FusionPredictor(fu_model),
        late_fusion=LateFusionPredictor(late),
        metrics={},
        histories={SEQUENCE: seq_hist, THERMAL: th_hist, FUSION: fu_hist},
    )
    for name, predictor in cell.predictors().items():
        prob = predictor.predict_proba(prep.xs_val, prep.xt_val)
        y_pred = rf.predict_labels(prep.xs_val) if name == RF else None
        cell.metrics[name] = compute_metrics(prep.y_val, prob, y_pred)
    return cell


# ---------------------------------------------------------------------------
# Experiment config and report plumbing.
# ---------------------------------------------------------------------------


EXPERIMENTS = (
    "ablation",
    "noise_sweep",
    "learning_curve",
    "corruption",
    "audit",
    "localize",
    "shap",
)


@dataclass
class ExperimentConfig:
    experiment: str
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    dataset_path: Optional[str] = None
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    sigma_grid: tuple[float, ...] = DEFAULT_SIGMA_GRID
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    max_epochs: int = 50
    patience: int = 10
    batch_size: int = 32
    augment: bool = True
    n_shap_samples: int = 200
    n_background: int = 100
    max_heatmaps: int = 16
    iou_quantile: float = 0.9
    expected_top_channel: Optional[str] = None

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; pick from {EXPERIMENTS}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if list(self.sigma_grid) != sorted(self.sigma_grid):
            raise ValueError("sigma grid must be sorted ascending")
        if list(self.fractions) != sorted(self.fractions):
            raise ValueError("fractions grid must be sorted ascending")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "generator": self.generator.to_dict(),
            "dataset_path": self.dataset_path,
            "seeds": list(self.seeds),
            "sigma_grid": list(self.sigma_grid),
            "fractions": list(self.fractions),
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "batch_size": self.batch_size,
            "augment": self.augment,
            "n_shap_samples": self.n_shap_samples,
            "n_background": self.n_background,
            "max_heatmaps": self.max_heatmaps,
            "iou_quantile": self.iou_quantile,
            "expected_top_channel": self.expected_top_channel,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        kwargs = dict(payload)
        kwargs["generator"] = GeneratorConfig.from_dict(kwargs["generator"])
        for key in ("seeds", "sigma_grid", "fractions"):
            kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class ExperimentReport:
    name: str
    config: dict
    tables: dict[str, list[dict]] = field(default_factory=dict)
    verdicts: dict[str, bool] = field(default_factory=dict)
    scalars: dict[str, float] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def save(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        for table_name, rows in self.tables.items():
            path = out_dir / f"{table_name}.csv"
            _write_rows_csv(rows, path)
            self.artifacts[table_name] = path.name
        payload = {
            "experiment": self.name,
            "config": self.config,
            "verdicts": self.verdicts,
            "scalars": self.scalars,
            "artifacts": self.artifacts,
            "passed": self.passed,
        }
        (out_dir / "report.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n"
        )


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _write_rows_csv(rows: list[dict], path: Path) -> None:
    if not rows:
        path.write_text("")
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row[f]) for f in fields])


def ensure_out_dir(path: str | Path, force: bool = False) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise FileExistsError(
                f"output directory {out} is not empty; pass force to overwrite"
            )
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_or_generate(config: ExperimentConfig) -> Dataset:
    if config.dataset_path:
        return load_dataset(config.dataset_path)
    return generate_dataset(config.generator)


def _metrics_row(seed: int, model: str, metrics: MetricsRow) -> dict:
    row = {"model": model, "seed": seed}
    row.update(metrics.as_dict())
    return row


# ---------------------------------------------------------------------------
# Ablation.
# ---------------------------------------------------------------------------


def run_ablation(config: ExperimentConfig, cells: Optional[dict[int, SeedCell]] = None) -> ExperimentReport:
    """Train all variants across seeds; rank and significance-test them."""
    dataset = load_or_generate(config)
    prep = prepare_data(dataset)
    report = ExperimentReport(name="ablation", config=config.to_dict())

    cells = cells or {}
    metric_rows = []
    f1: dict[str, list[float]] = {m: [] for m in MODEL_ORDER}
    for seed in config.seeds:
        if seed not in cells:
            cells[seed] = train_cell(
                prep, seed, config.train_config(seed), AugmentConfig(enabled=config.augment)
            )
        cell = cells[seed]
        for model in MODEL_ORDER:
            metric_rows.append(_metrics_row(seed, model, cell.metrics[model]))
            f1[model].append(cell.metrics[model].f1_macro)
    report.tables["metrics"] = metric_rows

    summary_rows = []
    for model in MODEL_ORDER:
        arr = np.array(f1[model])
        summary_rows.append(
            {
                "model": model,
                "f1_mean": float(arr.mean()),
                "f1_std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                "n_seeds": len(arr),
            }
        )
    report.tables["summary"] = summary_rows

    significance: list[SignificanceRow] = []
    if len(config.seeds) >= 2:
        for model in (SEQUENCE, THERMAL, FUSION, LATE_FUSION):
            significance.append(
                compare_paired(f"rf_vs_{model}", f1[RF], f1[model], seed=config.seeds[0])
            )
        report.tables["significance"] = [
            {
                "comparison": row.comparison,
                "f1_a": row.mean_a,
                "f1_b": row.mean_b,
                "delta_f1": row.delta,
                "p_value": row.p_value,
                "cohens_d": row.cohens_d,
                "ci_low": row.ci_low,
                "ci_high": row.ci_high,
            }
            for row in significance
        ]

    epochs_rows = []
    for seed, cell in sorted(cells.items()):
        for model, hist in cell.histories.items():
            epochs_rows.append(
                {
                    "model": model,
                    "seed": seed,
                    "epochs_run": hist.epochs_run,
                    "best_epoch": hist.best_epoch,
                    "stopped_early": int(hist.stopped_early),
                }
            )
    report.tables["epochs"] = epochs_rows

    mean_f1 = {m: float(np.mean(f1[m])) for m in MODEL_ORDER}
    tol = ORDERING_TOLERANCE
    report.verdicts["rf_above_late_fusion"] = mean_f1[RF] >= mean_f1[LATE_FUSION] - tol
    report.verdicts["late_fusion_above_sequence"] = (
        mean_f1[LATE_FUSION] >= mean_f1[SEQUENCE] - tol
    )
    report.verdicts["late_fusion_above_fusion"] = mean_f1[LATE_FUSION] >= mean_f1[FUSION] - tol
    report.verdicts["sequence_above_thermal"] = mean_f1[SEQUENCE] >= mean_f1[THERMAL] - tol
    report.verdicts["fusion_above_thermal"] = mean_f1[FUSION] >= mean_f1[THERMAL] - tol
    report.verdicts["thermal_minimal"] = mean_f1[THERMAL] == min(mean_f1.values())
    max_prior = max(config.generator.class_priors)
    report.verdicts["thermal_near_chance"] = mean_f1[THERMAL] <= max_prior + 0.05
    report.verdicts["rf_f1_at_least_090"] = mean_f1[RF] >= 0.90
    rf_vs_fusion = next(
        (row for row in significance if row.comparison == "rf_vs_fusion"), None
    )
    if rf_vs_fusion is not None:
        report.verdicts["rf_beats_fusion_significantly"] = (
            rf_vs_fusion.delta > 0 and rf_vs_fusion.p_value < 0.05
        )
    for model in MODEL_ORDER:
        report.scalars[f"f1_{model}"] = mean_f1[model]
    return report


# ---------------------------------------------------------------------------
# Noise sweep.
# ---------------------------------------------------------------------------


def run_noise_sweep(
    config: ExperimentConfig, cell: Optional[SeedCell] = None
) -> ExperimentReport:
    """Evaluate clean-trained RF and sequence models under test-time noise."""
    dataset = load_or_generate(config)
    prep = prepare_data(dataset)
    seed = config.seeds[0]
    if cell is None:
        cell = train_cell(
            prep, seed, config.train_config(seed), AugmentConfig(enabled=config.augment)
        )
    report = ExperimentReport(name="noise_sweep", config=config.to_dict())

    rows = []
    rf_curve, seq_curve = [], []
    for idx, sigma in enumerate(config.sigma_grid):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 7001, idx)))
        xs_noisy = inject_noise_array(prep.xs_val, sigma, rng)
        rf_prob = cell.rf.predict_proba(xs_noisy, prep.xt_val)
        rf_pred = cell.rf.predict_labels(xs_noisy)
        rf_m = compute_metrics(prep.y_val, rf_prob, rf_pred)
        seq_m = compute_metrics(
            prep.y_val, cell.sequence.predict_proba(xs_noisy, prep.xt_val)
        )
        rows.append(
            {
                "sigma": sigma,
                "rf_f1": rf_m.f1_macro,
                "sequence_f1": seq_m.f1_macro,
                "rf_accuracy": rf_m.accuracy,
                "sequence_accuracy": seq_m.accuracy,
                "gap": rf_m.f1_macro - seq_m.f1_macro,
            }
        )
        rf_curve.append(rf_m.f1_macro)
        seq_curve.append(seq_m.f1_macro)
    report.tables["curves"] = rows

    gaps = np.array(rf_curve) - np.array(seq_curve)
    crossover_sigma = None
    for i in range(1, len(gaps)):
        if gaps[i - 1] > 0 >= gaps[i]:
            # Linear interpolation of the sign change.
            s0, s1 = config.sigma_grid[i - 1], config.sigma_grid[i]
            crossover_sigma = s0 + (s1 - s0) * gaps[i - 1] / (gaps[i - 1] - gaps[i])
            break
    if crossover_sigma is not None:
        report.scalars["crossover_sigma"] = float(crossover_sigma)

    low_idx = [i for i, s in enumerate(config.sigma_grid) if s <= 0.05]
    report.verdicts["rf_ahead_at_low_noise"] = all(gaps[i] > 0 for i in low_idx)
    if 0.05 in config.sigma_grid and 0.3 in config.sigma_grid:
        g05 = gaps[config.sigma_grid.index(0.05)]
        g30 = gaps[config.sigma_grid.index(0.3)]
        report.verdicts["gap_shrinks_or_inverts"] = (g05 - g30 >= 0.10) or (g30 < 0)
        report.scalars["gap_at_0.05"] = float(g05)
        report.scalars["gap_at_0.3"] = float(g30)
    return report


# ---------------------------------------------------------------------------
# Learning curve.
# ---------------------------------------------------------------------------


def _stratified_subsample(
    y: np.ndarray, fraction: float, rng: np.random.Generator
) -> np.ndarray:
    keep: list[np.ndarray] = []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        n_keep = max(int(round(fraction * idx.size)), 2)
        keep.append(rng.permutation(idx)[:n_keep])
    return np.sort(np.concatenate(keep))


def run_learning_curve(config: ExperimentConfig) -> ExperimentReport:
    """Data-efficiency curves for RF, sequence, and fusion (3 seeds by default)."""
    dataset = load_or_generate(config)
    prep = prepare_data(dataset)
    seeds = config.seeds[:3]
    report = ExperimentReport(name="learning_curve", config=config.to_dict())

    models = (RF, SEQUENCE, FUSION)
    curve: dict[str, dict[float, list[float]]] = {m: {f: [] for f in config.fractions} for m in models}
    rows = []
    for f_idx, fraction in enumerate(config.fractions):
        for seed in seeds:
            rng = np.random.default_rng(np.random.SeedSequence((seed, 7103, f_idx)))
            sub_idx = (
                np.arange(len(prep.y_train))
                if fraction >= 1.0
                else _stratified_subsample(prep.y_train, fraction, rng)
            )
            sub = PreparedData(
                scaler=prep.scaler,
                normalizer=prep.normalizer,
                channel_names=prep.channel_names,
                xs_train=prep.xs_train[sub_idx],
                xt_train=prep.xt_train[sub_idx],
                y_train=prep.y_train[sub_idx],
                xs_val=prep.xs_val,
                xt_val=prep.xt_val,
                y_val=prep.y_val,
            )
            x_sub, _ = extract_statistical_matrix(sub.xs_train, prep.channel_names)
            forest = fit_forest(x_sub, sub.y_train, ForestConfig(seed=seed))
            rf = ForestPredictor(forest, prep.channel_names)
            rf_f1 = compute_metrics(
                prep.y_val,
                rf.predict_proba(prep.xs_val),
                rf.predict_labels(prep.xs_val),
            ).f1_macro
            curve[RF][fraction].append(rf_f1)

            seq_model, _ = train_sequence(
                sub, seed, config.train_config(seed), AugmentConfig(enabled=config.augment)
            )
            seq_f1 = compute_metrics(
                prep.y_val, _chunked(seq_model.predict_proba, prep.xs_val)
            ).f1_macro
            curve[SEQUENCE][fraction].append(seq_f1)

            fu_model, _ = train_fusion(
                sub, seed, config.train_config(seed), AugmentConfig(enabled=config.augment)
            )
            fu_f1 = compute_metrics(
                prep.y_val, FusionPredictor(fu_model).predict_proba(prep.xs_val, prep.xt_val)
            ).f1_macro
            curve[FUSION][fraction].append(fu_f1)

            rows.append(
                {
                    "fraction": fraction,
                    "seed": seed,
                    "rf_f1": rf_f1,
                    "sequence_f1": seq_f1,
                    "fusion_f1": fu_f1,
                    "n_train": int(sub_idx.size),
                }
            )
    report.tables["cells"] = rows

    mean_rows = []
    for fraction in config.fractions:
        row = {"fraction": fraction}
        for model in models:
            arr = np.array(curve[model][fraction])
            row[f"{model}_mean"] = float(arr.mean())
            row[f"{model}_std"] = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        mean_rows.append(row)
    report.tables["curve_mean"] = mean_rows

    smallest = config.fractions[0]
    report.verdicts["rf_leads_at_smallest_fraction"] = float(
        np.mean(curve[RF][smallest])
    ) >= float(np.mean(curve[FUSION][smallest]))
    for model in models:
        means = [float(np.mean(curve[model][f])) for f in config.fractions]
        report.verdicts[f"{model}_curve_monotone_within_2pp"] = all(
            means[i + 1] >= means[i] - 0.02 for i in range(len(means) - 1)
        )
    return report


# ---------------------------------------------------------------------------
# Corruption.
# ---------------------------------------------------------------------------


def run_corruption(
    config: ExperimentConfig, cell: Optional[SeedCell] = None
) -> ExperimentReport:
    dataset = load_or_generate(config)
    prep = prepare_data(dataset)
    seed = config.seeds[0]
    if cell is None:
        cell = train_cell(
            prep, seed, config.train_config(seed), AugmentConfig(enabled=config.augment)
        )
    report = ExperimentReport(name="corruption", config=config.to_dict())

    rows = corruption_matrix(cell.predictors(), prep.xs_val, prep.xt_val, prep.y_val)
    report.tables["corruption"] = [
        {
            "model": row.model,
            "f1_none": row.f1["none"],
            "f1_zero_thermal": row.f1["zero_thermal"],
            "f1_zero_sensor": row.f1["zero_sensor"],
            "delta_thermal": row.delta_thermal,
            "delta_sensor": row.delta_sensor,
        }
        for row in rows
    ]
    by_name = {row.model: row for row in rows}
    fusion_row = by_name[FUSION]
    report.verdicts["forest_thermal_delta_exactly_zero"] = by_name[RF].delta_thermal == 0.0
    report.verdicts["fusion_zero_thermal_drop_small"] = fusion_row.delta_thermal <= 0.05
    report.verdicts["fusion_zero_sensor_drop_large"] = fusion_row.delta_sensor >= 0.20
    report.scalars["fusion_delta_thermal"] = fusion_row.delta_thermal
    report.scalars["fusion_delta_sensor"] = fusion_row.delta_sensor
    return report


# ---------------------------------------------------------------------------
# Audit.
# ---------------------------------------------------------------------------


def run_audit(
    config: ExperimentConfig,
    cell: Optional[SeedCell] = None,
    audit_config: AuditConfig = AuditConfig(),
) -> ExperimentReport:
    dataset = load_or_generate(config)
    prep = prepare_data(dataset)
    seed = config.seeds[0]
    if cell is None:
        cell = train_cell(
            prep, seed, config.train_config(seed), AugmentConfig(enabled=config.augment)
        )
    report = ExperimentReport(name="audit", config=config.to_dict())

    gates = cell.fusion.model.gate_values(prep.xs_val, prep.xt_val)
    ranking = _shap_sensor_ranking(cell, prep, config, n_samples=min(64, len(prep.y_val)))
    corruption_rows = corruption_matrix(
        {FUSION: cell.fusion}, prep.xs_val, prep.xt_val, prep.y_val
    )
    expected_top = config.expected_top_channel or prep.channel_names[0]
    audit = audit_protocol(
        gates=gates,
        f1_sensor=cell.metrics[RF].f1_macro,
        f1_thermal=cell.metrics[THERMAL].f1_macro,
        f1_fusion=cell.metrics[FUSION].f1_macro,
        sensor_ranking=ranking,
        expected_top_channel=expected_top,
        fusion_corruption=corruption_rows[0],
        config=audit_config,
    )
    report.tables["audit_steps"] = [
        {"step": s.name, "flagged": int(s.flagged)} for s in audit.steps
    ]
    report.scalars["bias"] = audit.bias.bias
    report.scalars["mean_gate"] = audit.bias.mean_gate
    report.scalars["ideal_gate"] = audit.bias.ideal_gate
    report.scalars["p_value"] = audit.bias.p_value
    report.verdicts["audit_ran_all_steps"] = len(audit.steps) == 5

    gsr_report = gsr(
        cell.fusion.model,
        prep.xs_val[: min(256, len(prep.y_val))],
        prep.xt_val[: min(256, len(prep.y_val))],
        prep.y_val[: min(256, len(prep.y_val))],
    )
    report.tables["gsr"] = [gsr_report.as_dict()]
    report.tables["audit_detail"] = [
        {"step": s.name, "flagged": int(s.flagged), "evidence": json.dumps(s.evidence, sort_keys=True)}
        for s in audit.steps
    ]
    report.scalars["flag_count"] = float(len(audit.flags))
    return report


def _shap_sensor_ranking(
    cell: SeedCell, prep: PreparedData, config: ExperimentConfig, n_samples: int
) -> list[tuple[str, float]]:
    x_train, names = extract_statistical_matrix(prep.xs_train, prep.channel_names)
    x_val, _ = extract_statistical_matrix(prep.xs_val, prep.channel_names)
    rng = np.random.default_rng(np.random.SeedSequence((cell.seed, 7207)))
    bg = x_train[rng.choice(len(x_train), min(config.n_background, len(x_train)), replace=False)]
    explainer = TreeShapExplainer(cell.rf.forest, bg, names)
    totals: dict[str, float] = {}
    for i in range(min(n_samples, x_val.shape[0])):
        rep = explainer.explain(x_val[i])
        for channel, value in rep.sensor_aggregates.items():
            totals[channel] = totals.get(channel, 0.0) + value
    n = max(min(n_samples, x_val.shape[0]), 1)
    return sorted(((ch, v / n) for ch, v in totals.items()), key=lambda kv: -kv[1])


# ---------------------------------------------------------------------------
# Localization.
# ---------------------------------------------------------------------------


def run_localize(
    config: ExperimentConfig,
    cell: Optional[SeedCell] = None,
    out_dir: Optional[Path] = None,
) -> ExperimentReport:
    dataset = load_or_generate(config)
    prep = prepare_data(dataset)
    seed = config.seeds[0]
    if cell is None:
        cell = train_cell(
            prep, seed, config.train_config(seed), AugmentConfig(enabled=config.augment)
        )
    report = ExperimentReport(name="localize", config=config.to_dict())

    thermal_model = cell.thermal.model
    stage1_pred = cell.rf.predict_labels(prep.xs_val)
    val_samples = dataset.validation_samples

    encoder_calls_before = thermal_model.encoder.encode_calls
    normal_idx = [i for i, p in enumerate(stage1_pred) if p == int(LabelClass.NORMAL)]
    for i in normal_idx:
        result = cascade_localize(
            lambda s: LabelClass(int(stage1_pred[i])),
            thermal_model,
            val_samples[i],
            prep.normalizer,
            config.iou_quantile,
        )
        assert result is None
    calls_on_normal = thermal_model.encoder.encode_calls - encoder_calls_before
    report.verdicts["stage2_never_runs_on_normal"] = calls_on_normal == 0
    report.scalars["encoder_calls_on_normal"] = float(calls_on_normal)

    ious = []
    danger_hits = 0
    danger_total = 0
    index_entries = []
    emitted = 0
    for i, sample in enumerate(val_samples):
        if sample.thermal.hotspot is None:
            continue
        pred = LabelClass(int(stage1_pred[i]))
        frame = prep.xt_val[i, 0]
        target = int(pred) if pred != LabelClass.NORMAL else int(sample.label)
        heat = combined_heatmap(thermal_model, frame, target)
        iou = localization_iou(heat, sample.thermal.hotspot, config.iou_quantile)
        ious.append(iou)
        if sample.label == LabelClass.DANGER:
            danger_total += 1
            r, c = heat.argmax_position()
            box = sample.thermal.hotspot
            if box.row0 <= r < box.row1 and box.col0 <= c < box.col1:
                danger_hits += 1
        if out_dir is not None and emitted < config.max_heatmaps:
            pgm = f"heatmap_{i:04d}.pgm"
            write_pgm(heat, out_dir / pgm)
            index_entries.append(
                {"sample": i, "class": int(sample.label), "iou": iou, "file": pgm}
            )
            emitted += 1

    if out_dir is not None:
        write_heatmap_index(index_entries, out_dir / "heatmaps.json")
        report.artifacts["heatmap_index"] = "heatmaps.json"
    median_iou = float(np.median(ious)) if ious else 0.0
    hit_rate = danger_hits / danger_total if danger_total else 0.0
    report.tables["iou"] = [
        {"sample": i, "iou": v} for i, v in enumerate(ious)
    ]
    report.scalars["median_iou"] = median_iou
    report.scalars["danger_argmax_hit_rate"] = float(hit_rate)
    report.verdicts["median_iou_at_least_05"] = median_iou >= 0.5
    report.verdicts["danger_argmax_hit_rate_at_least_08"] = hit_rate >= 0.8
    return report


# ---------------------------------------------------------------------------
# SHAP report.
# ---------------------------------------------------------------------------


def run_shap(
    config: ExperimentConfig,
    cell: Optional[SeedCell] = None,
    out_dir: Optional[Path] = None,
) -> ExperimentReport:
    dataset = load_or_generate(config)
    prep = prepare_data(dataset)
    seed = config.seeds[0]
    if cell is None:
        # The SHAP suite only needs the stage-1 detector.
        x_train, _ = extract_statistical_matrix(prep.xs_train, prep.channel_names)
        forest = fit_forest(x_train, prep.y_train, ForestConfig(seed=seed))
        rf = ForestPredictor(forest, prep.channel_names)
        prob = rf.predict_proba(prep.xs_val)
        metrics = compute_metrics(prep.y_val, prob, rf.predict_labels(prep.xs_val))
        cell = SeedCell(
            seed=seed,
            rf=rf,
            sequence=None,  # type: ignore[arg-type]
            thermal=None,  # type: ignore[arg-type]
            fusion=None,  # type: ignore[arg-type]
            late_fusion=None,  # type: ignore[arg-type]
            metrics={RF: metrics},
            histories={},
        )
    report = ExperimentReport(name="shap", config=config.to_dict())

    x_train, names = extract_statistical_matrix(prep.xs_train, prep.channel_names)
    x_val, _ = extract_statistical_matrix(prep.xs_val, prep.channel_names)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7207)))
    bg = x_train[rng.choice(len(x_train), min(config.n_background, len(x_train)), replace=False)]
    explainer = TreeShapExplainer(cell.rf.forest, bg, names)

    n_explain = min(config.n_shap_samples, x_val.shape[0])
    probs = predict_proba_batch(cell.rf.forest, x_val[:n_explain])
    totals: dict[str, float] = {}
    worst_recon = 0.0
    for i in range(n_explain):
        rep = explainer.explain(x_val[i])
        worst_recon = max(worst_recon, float(np.max(np.abs(rep.reconstruction() - probs[i]))))
        for channel, value in rep.sensor_aggregates.items():
            totals[channel] = totals.get(channel, 0.0) + value
    ranking = sorted(((ch, v / n_explain) for ch, v in totals.items()), key=lambda kv: -kv[1])

    report.tables["sensor_ranking"] = [
        {"rank": i + 1, "channel": ch, "mean_aggregate": val}
        for i, (ch, val) in enumerate(ranking)
    ]
    report.scalars["n_explained"] = float(n_explain)
    report.scalars["worst_local_accuracy_error"] = worst_recon
    expected_top = config.expected_top_channel or prep.channel_names[0]
    report.verdicts["designated_channel_ranks_first"] = (
        bool(ranking) and ranking[0][0] == expected_top
    )
    report.verdicts["local_accuracy_1e9"] = worst_recon < 1e-9

    if out_dir is not None:
        from cascadet.treeshap import export_attribution_csv, export_attribution_json

        first = explainer.explain(x_val[0])
        export_attribution_csv(first, out_dir / "attribution_sample0.csv")
        export_attribution_json(first, out_dir / "attribution_sample0.json")
        report.artifacts["attribution_sample0"] = "attribution_sample0.csv"
    return report


# ---------------------------------------------------------------------------
# Dispatch and replay.
# ---------------------------------------------------------------------------


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path, force: bool = False
) -> ExperimentReport:
    out = ensure_out_dir(out_dir, force)
    if config.experiment == "ablation":
        report = run_ablation(config)
    elif config.experiment == "noise_sweep":
        report = run_noise_sweep(config)
    elif config.experiment == "learning_curve":
        report = run_learning_curve(config)
    elif config.experiment == "corruption":
        report = run_corruption(config)
    elif config.experiment == "audit":
        report = run_audit(config)
    elif config.experiment == "localize":
        report = run_localize(config, out_dir=out)
    elif config.experiment == "shap":
        report = run_shap(config, out_dir=out)
    else:  # pragma: no cover - guarded by ExperimentConfig
        raise ValueError(config.experiment)
    report.save(out)
    return report


def replay(report_dir: str | Path, out_dir: str | Path, force: bool = False) -> bool:
    """Re-run an experiment from its embedded config; compare metric CSV bytes."""
    report_dir = Path(report_dir)
    payload = json.loads((report_dir / "report.json").read_text())
    config = ExperimentConfig.from_dict(payload["config"])
    run_experiment(config, out_dir, force=force)
    out_dir = Path(out_dir)
    identical = True
    for name in payload["artifacts"].values():
        if not name.endswith(".csv"):
            continue
        old = (report_dir / name).read_bytes()
        new = (out_dir / name).read_bytes()
        if old != new:
            identical = False
    return identical
