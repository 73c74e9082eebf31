import json
from pathlib import Path

import numpy as np
import pytest

from cascadet.data.types import GeneratorConfig
from cascadet.experiments import (
    ExperimentConfig,
    ExperimentReport,
    ensure_out_dir,
    replay,
    run_ablation,
    run_audit,
    run_corruption,
    run_experiment,
    run_learning_curve,
    run_localize,
    run_noise_sweep,
    run_shap,
    train_cell,
)


def _tiny_config(experiment, **kwargs):
    defaults = dict(
        experiment=experiment,
        generator=GeneratorConfig(n_samples=120, seed=13),
        seeds=(1, 2),
        sigma_grid=(0.0, 0.05, 0.3),
        fractions=(0.5, 1.0),
        max_epochs=2,
        patience=2,
        augment=False,
        n_shap_samples=8,
        n_background=12,
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


@pytest.fixture(scope="module")
def tiny_cells():
    from cascadet.baselines import AugmentConfig, prepare_data
    from cascadet.data.generator import generate_dataset

    cfg = _tiny_config("ablation")
    prep = prepare_data(generate_dataset(cfg.generator))
    return {
        seed: train_cell(prep, seed, cfg.train_config(seed), AugmentConfig(enabled=False))
        for seed in cfg.seeds
    }


def test_experiment_config_validation():
    with pytest.raises(ValueError, match="unknown experiment"):
        ExperimentConfig(experiment="nope")
    with pytest.raises(ValueError, match="sorted"):
        _tiny_config("ablation", sigma_grid=(0.3, 0.0))
    with pytest.raises(ValueError, match="seeds"):
        _tiny_config("ablation", seeds=())


def test_config_roundtrip():
    cfg = _tiny_config("noise_sweep")
    clone = ExperimentConfig.from_dict(cfg.to_dict())
    assert clone.to_dict() == cfg.to_dict()


def test_ablation_report_structure(tiny_cells, tmp_path):
    cfg = _tiny_config("ablation")
    report = run_ablation(cfg, cells=dict(tiny_cells))
    assert len(report.tables["metrics"]) == 2 * 5  # seeds x models
    assert {r["model"] for r in report.tables["summary"]} == {
        "rf",
        "sequence",
        "thermal",
        "fusion",
        "late_fusion",
    }
    assert len(report.tables["significance"]) == 4
    report.save(tmp_path)
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "metrics.csv").exists()
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["experiment"] == "ablation"
    assert "rf_f1_at_least_090" in payload["verdicts"]


def test_noise_sweep_sigma_zero_equals_clean(tiny_cells):
    cfg = _tiny_config("noise_sweep")
    cell = tiny_cells[1]
    report = run_noise_sweep(cfg, cell=cell)
    rows = report.tables["curves"]
    assert [r["sigma"] for r in rows] == [0.0, 0.05, 0.3]
    # sigma 0 equals clean ablation metrics bitwise
    assert rows[0]["rf_f1"] == cell.metrics["rf"].f1_macro
    assert rows[0]["sequence_f1"] == cell.metrics["sequence"].f1_macro


def test_corruption_report(tiny_cells):
    cfg = _tiny_config("corruption")
    report = run_corruption(cfg, cell=tiny_cells[1])
    rows = {r["model"]: r for r in report.tables["corruption"]}
    assert rows["rf"]["delta_thermal"] == 0.0
    assert report.verdicts["forest_thermal_delta_exactly_zero"]


def test_audit_runs_all_steps(tiny_cells):
    cfg = _tiny_config("audit")
    report = run_audit(cfg, cell=tiny_cells[1])
    assert report.verdicts["audit_ran_all_steps"]
    assert len(report.tables["audit_steps"]) == 5
    assert len(report.tables["gsr"]) == 1


def test_localize_report(tiny_cells, tmp_path):
    cfg = _tiny_config("localize", max_heatmaps=3)
    report = run_localize(cfg, cell=tiny_cells[1], out_dir=tmp_path)
    assert report.verdicts["stage2_never_runs_on_normal"]
    assert (tmp_path / "heatmaps.json").exists()
    pgms = list(tmp_path.glob("heatmap_*.pgm"))
    assert 0 < len(pgms) <= 3
    assert "median_iou" in report.scalars


def test_shap_report(tmp_path):
    cfg = _tiny_config("shap")
    report = run_shap(cfg, out_dir=tmp_path)
    assert report.verdicts["local_accuracy_1e9"]
    assert report.scalars["n_explained"] == 8
    ranking = report.tables["sensor_ranking"]
    assert len(ranking) == 8  # channels
    assert (tmp_path / "attribution_sample0.csv").exists()


def test_learning_curve_small():
    cfg = _tiny_config("learning_curve", seeds=(1,))
    report = run_learning_curve(cfg)
    assert len(report.tables["curve_mean"]) == 2
    assert len(report.tables["cells"]) == 2  # fractions x 1 seed
    for row in report.tables["cells"]:
        assert row["n_train"] > 0


def test_out_dir_protection(tmp_path):
    target = tmp_path / "out"
    target.mkdir()
    (target / "existing.txt").write_text("data")
    with pytest.raises(FileExistsError, match="force"):
        ensure_out_dir(target, force=False)
    ensure_out_dir(target, force=True)
    assert not (target / "existing.txt").exists()


def test_run_experiment_and_replay_byte_identical(tmp_path):
    cfg = _tiny_config("shap")
    out1 = tmp_path / "first"
    report = run_experiment(cfg, out1)
    assert (out1 / "report.json").exists()
    assert replay(out1, tmp_path / "second")
    # same CSV bytes
    a = (out1 / "sensor_ranking.csv").read_bytes()
    b = (tmp_path / "second" / "sensor_ranking.csv").read_bytes()
    assert a == b


def test_report_passed_flag():
    report = ExperimentReport(name="x", config={}, verdicts={"a": True, "b": True})
    assert report.passed
    report.verdicts["c"] = False
    assert not report.passed
