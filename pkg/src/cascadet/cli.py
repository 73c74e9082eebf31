"""Command-line surface: generate data, train models, run experiment suites.

Every experiment writes a self-describing report directory (report.json with
the full config plus deterministic CSV artifacts) that `replay` can
reproduce byte for byte. Exit code is nonzero when an asserted qualitative
verdict fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from cascadet.data.generator import generate_dataset
from cascadet.data.io import load_dataset, save_dataset
from cascadet.data.types import GeneratorConfig
from cascadet.experiments import (
    DEFAULT_FRACTIONS,
    DEFAULT_SEEDS,
    DEFAULT_SIGMA_GRID,
    EXPERIMENTS,
    ExperimentConfig,
    ensure_out_dir,
    replay,
    run_experiment,
)

OUTPUT_ROOT_ENV = "CASCADET_OUTPUT_ROOT"


def _default_out(name: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return str(Path(root) / name)


def _add_generator_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-samples", type=int, default=None)
    parser.add_argument("--gen-seed", type=int, default=None)
    parser.add_argument("--sensor-signal-strength", type=float, default=None)
    parser.add_argument("--thermal-signal-strength", type=float, default=None)
    parser.add_argument("--thermal-variance-inflation", type=float, default=None)
    parser.add_argument("--danger-spike-rate", type=float, default=None)


def _generator_from_args(args: argparse.Namespace, base: GeneratorConfig) -> GeneratorConfig:
    payload = base.to_dict()
    overrides = {
        "n_samples": args.n_samples,
        "seed": args.gen_seed,
        "sensor_signal_strength": args.sensor_signal_strength,
        "thermal_signal_strength": args.thermal_signal_strength,
        "thermal_variance_inflation": args.thermal_variance_inflation,
        "danger_spike_rate": args.danger_spike_rate,
    }
    for key, value in overrides.items():
        if value is not None:
            payload[key] = value
    return GeneratorConfig.from_dict(payload)


def _add_experiment_args(parser: argparse.ArgumentParser, name: str) -> None:
    parser.add_argument("--config", type=str, default=None, help="JSON experiment config")
    parser.add_argument("--dataset", type=str, default=None, help="dataset directory")
    parser.add_argument("--out", type=str, default=_default_out(name))
    parser.add_argument("--force", action="store_true", help="overwrite the output directory")
    parser.add_argument("--seeds", type=int, nargs="+", default=None)
    parser.add_argument("--sigma-grid", type=float, nargs="+", default=None)
    parser.add_argument("--fractions", type=float, nargs="+", default=None)
    parser.add_argument("--max-epochs", type=int, default=None)
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument("--no-augment", action="store_true")
    _add_generator_args(parser)


def _experiment_config(args: argparse.Namespace, experiment: str) -> ExperimentConfig:
    if args.config:
        payload = json.loads(Path(args.config).read_text())
        payload["experiment"] = experiment
        config = ExperimentConfig.from_dict(payload)
    else:
        config = ExperimentConfig(experiment=experiment)
    generator = _generator_from_args(args, config.generator)
    return ExperimentConfig(
        experiment=experiment,
        generator=generator,
        dataset_path=args.dataset if args.dataset else config.dataset_path,
        seeds=tuple(args.seeds) if args.seeds else config.seeds,
        sigma_grid=tuple(args.sigma_grid) if args.sigma_grid else config.sigma_grid,
        fractions=tuple(args.fractions) if args.fractions else config.fractions,
        max_epochs=args.max_epochs if args.max_epochs is not None else config.max_epochs,
        patience=args.patience if args.patience is not None else config.patience,
        batch_size=config.batch_size,
        augment=not args.no_augment if args.no_augment else config.augment,
        n_shap_samples=config.n_shap_samples,
        n_background=config.n_background,
        max_heatmaps=config.max_heatmaps,
        iou_quantile=config.iou_quantile,
        expected_top_channel=config.expected_top_channel,
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cascadet",
        description="Cascaded multimodal anomaly detection experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic dataset directory")
    gen.add_argument("--out", type=str, default=_default_out("dataset"))
    gen.add_argument("--force", action="store_true")
    _add_generator_args(gen)

    for name in EXPERIMENTS:
        cli_name = name.replace("_", "-")
        p = sub.add_parser(cli_name, help=f"run the {name} experiment")
        _add_experiment_args(p, name)

    train = sub.add_parser("train", help="train one model kind and report validation metrics")
    train.add_argument("kind", choices=("rf", "sequence", "thermal", "fusion"))
    train.add_argument("--out", type=str, default=_default_out("train"))
    train.add_argument("--force", action="store_true")
    train.add_argument("--dataset", type=str, default=None)
    train.add_argument("--seed", type=int, default=42)
    train.add_argument("--max-epochs", type=int, default=50)
    train.add_argument("--patience", type=int, default=10)
    train.add_argument("--no-augment", action="store_true")
    _add_generator_args(train)

    rep = sub.add_parser("replay", help="re-run a report from its embedded config")
    rep.add_argument("report_dir", type=str)
    rep.add_argument("--out", type=str, default=None)
    rep.add_argument("--force", action="store_true")

    args = parser.parse_args(argv)

    if args.command == "generate":
        out = ensure_out_dir(args.out, args.force)
        config = _generator_from_args(args, GeneratorConfig())
        dataset = generate_dataset(config)
        save_dataset(dataset, out)
        (out / "generator.json").write_text(
            json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        print(f"wrote {len(dataset)} samples to {out}")
        return 0

    if args.command == "replay":
        out = args.out or (args.report_dir.rstrip("/") + "_replay")
        identical = replay(args.report_dir, out, force=args.force)
        print("replay byte-identical" if identical else "replay DIFFERS")
        return 0 if identical else 1

    if args.command == "train":
        return _cmd_train(args)

    experiment = args.command.replace("-", "_")
    config = _experiment_config(args, experiment)
    report = run_experiment(config, args.out, force=args.force)
    for key, value in sorted(report.scalars.items()):
        print(f"{key} = {value:.6g}")
    for key, value in sorted(report.verdicts.items()):
        print(f"[{'pass' if value else 'FAIL'}] {key}")
    print(f"report written to {args.out}")
    return 0 if report.passed else 1


def _cmd_train(args: argparse.Namespace) -> int:
    from cascadet.baselines import (
        AugmentConfig,
        prepare_data,
        train_fusion,
        train_sequence,
        train_thermal,
    )
    from cascadet.evalstat import compute_metrics
    from cascadet.experiments import ForestPredictor
    from cascadet.features import extract_statistical_matrix
    from cascadet.forest import ForestConfig, fit_forest, save_forest
    from cascadet.neuralkit.checkpoint import save_checkpoint
    from cascadet.neuralkit.training import TrainConfig

    out = ensure_out_dir(args.out, args.force)
    generator = _generator_from_args(args, GeneratorConfig())
    dataset = load_dataset(args.dataset) if args.dataset else generate_dataset(generator)
    prep = prepare_data(dataset)
    train_cfg = TrainConfig(max_epochs=args.max_epochs, patience=args.patience, seed=args.seed)
    augment = AugmentConfig(enabled=not args.no_augment)

    if args.kind == "rf":
        x_train, _ = extract_statistical_matrix(prep.xs_train, prep.channel_names)
        forest = fit_forest(x_train, prep.y_train, ForestConfig(seed=args.seed))
        predictor = ForestPredictor(forest, prep.channel_names)
        metrics = compute_metrics(
            prep.y_val,
            predictor.predict_proba(prep.xs_val),
            predictor.predict_labels(prep.xs_val),
        )
        save_forest(forest, out / "forest.json")
    else:
        if args.kind == "sequence":
            model, history = train_sequence(prep, args.seed, train_cfg, augment)
            prob = model.predict_proba(prep.xs_val)
        elif args.kind == "thermal":
            model, history = train_thermal(prep, args.seed, train_cfg, augment)
            prob = model.predict_proba(prep.xt_val)
        else:
            model, history = train_fusion(prep, args.seed, train_cfg, augment)
            prob = model.predict_proba(prep.xs_val, prep.xt_val)
        metrics = compute_metrics(prep.y_val, prob)
        save_checkpoint(model, {"kind": args.kind, "seed": args.seed}, out / "model")
        history.to_csv(out / "training_curve.csv")

    (out / "metrics.json").write_text(
        json.dumps(metrics.as_dict(), indent=2, sort_keys=True) + "\n"
    )
    print(json.dumps(metrics.as_dict(), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
