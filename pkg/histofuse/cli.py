"""``histofuse`` command line: scan, train, tune, evaluate, predict, report, schema.

Exit codes: 0 success, 2 user/config/input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

from .config import (
    LOG_LEVELS,
    RUN_CONFIG_SCHEMA,
    RUN_SUMMARY_SCHEMA_VERSION,
    RunConfig,
    env_log_level,
    configure_logging,
    load_run_config,
    worker_threads,
)
from .data import (
    DEFAULT_RESCALE,
    MAGNIFICATIONS,
    TASK_LABELS,
    LabeledSet,
    Manifest,
    balance_classes,
    load_dataset,
    load_image,
    make_synthetic_dataset,
    patient_leakage,
    read_manifest,
    scan_directory,
    select_task,
    split_by_magnification,
    split_labeled,
    stratified_split,
    synthetic_task_set,
)
from .errors import EXIT_OK, EXIT_USER_ERROR, ConfigError, HistofuseError
from .metrics import MetricsReport, read_confusion_csv
from .models import ModelGraph, build_model, hierarchical_predict, load_model, save_weights
from .optim import EpochHistory, evaluate, train
from .pso import HYPERPARAMETER_SPACE, TuneResult, mock_objective, pso_tune_hyperparams
from .report import PSO_TRACE_FILENAME, render_pso_trace, render_report


logger = logging.getLogger(__name__)

WEIGHTS_FILENAME = "weights.bin"
HISTORY_FILENAME = "history.csv"
METRICS_TEXT_FILENAME = "metrics.txt"
METRICS_CSV_FILENAME = "metrics.csv"
CONFUSION_CSV_FILENAME = "confusion.csv"
RUN_SUMMARY_FILENAME = "run_summary.json"
TUNE_REPORT_FILENAME = "tune_report.json"
PSO_TRACE_CSV_FILENAME = "pso_trace.csv"
TUNE_DEFAULT_MAGNIFICATION = 40


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


def _write_json(path: Path, payload: dict) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _task_for_labels(class_labels: Sequence[str]) -> str:
    for task, labels in TASK_LABELS.items():
        if tuple(labels) == tuple(class_labels):
            return task
    raise ConfigError(f"model class labels {list(class_labels)} match no task")


# ---- data preparation ----


@dataclass
class SplitData:
    name: str
    train: LabeledSet
    val: LabeledSet
    magnification: int | str
    leaked_patients: int = 0


def _manifest_for(config: RunConfig, magnification: int | str) -> Manifest:
    manifest = read_manifest(config.manifest_path)
    if magnification != "merged":
        manifest = split_by_magnification(manifest)[int(magnification)]
    manifest = select_task(manifest, config.task)
    if config.split.balance_target is not None:
        manifest = balance_classes(manifest, config.split.balance_target, config.seed)
    return manifest


def _load_split(config: RunConfig, magnification: int | str, name: str) -> SplitData:
    if config.synthetic is not None:
        synthetic = make_synthetic_dataset(
            config.synthetic.num_classes, config.synthetic.per_class, config.input_size, config.synthetic.seed
        )
        dataset = synthetic_task_set(synthetic, config.task)
        train_set, val_set = split_labeled(dataset, config.split.val_fraction, config.seed)
        return SplitData(name, train_set, val_set, "synthetic")
    manifest = _manifest_for(config, magnification)
    if len(manifest) == 0:
        raise ConfigError(f"no {config.task} records at magnification {magnification}")
    train_manifest, val_manifest = stratified_split(manifest, config.split.val_fraction, config.seed)
    leaked = patient_leakage(train_manifest, val_manifest)
    if leaked:
        logger.warning("%d patient(s) appear in both training and validation splits", len(leaked))
    threads = worker_threads()
    return SplitData(
        name,
        load_dataset(train_manifest.records, config.task, config.input_size, threads, config.rescale),
        load_dataset(val_manifest.records, config.task, config.input_size, threads, config.rescale),
        magnification,
        len(leaked),
    )


def _training_splits(config: RunConfig) -> list[SplitData]:
    if config.split.per_magnification and config.synthetic is None:
        groups = split_by_magnification(read_manifest(config.manifest_path))
        return [_load_split(config, m, f"mag_{m}") for m in MAGNIFICATIONS if len(groups[m])]
    return [_load_split(config, config.split.resolved_magnification("merged"), "")]


# ---- artifacts ----


def _write_metrics(report: MetricsReport, out_dir: Path) -> None:
    _write_text(out_dir / METRICS_TEXT_FILENAME, report.to_text())
    _write_text(out_dir / METRICS_CSV_FILENAME, report.to_csv())
    _write_text(out_dir / CONFUSION_CSV_FILENAME, report.confusion.to_csv())


def run_train(config: RunConfig) -> dict:
    """Train one model per split; returns the run summary written beside the artifacts."""
    runs = []
    for split in _training_splits(config):
        out_dir = config.output_dir / split.name if split.name else config.output_dir
        model = build_model(config.model, config.build_args(), seed=config.seed)
        # Synthetic textures are generated in [0, 1] and never pass through load_image.
        model.rescale = config.rescale if config.synthetic is None else DEFAULT_RESCALE
        model, history = train(model, split.train, split.val, config.train_config())
        report = evaluate(model, split.val, config.batch_size)
        save_weights(model, out_dir / WEIGHTS_FILENAME)
        history.write_csv(out_dir / HISTORY_FILENAME)
        _write_metrics(report, out_dir)
        run = {
            "magnification": split.magnification,
            "train_samples": len(split.train),
            "val_samples": len(split.val),
            "epochs_run": len(history),
            "best_val_loss": min(row.val_loss for row in history.rows),
            "patient_leakage": split.leaked_patients,
            "metrics": report.to_dict(),
        }
        if split.name:
            _write_json(
                out_dir / RUN_SUMMARY_FILENAME,
                {"schema_version": RUN_SUMMARY_SCHEMA_VERSION, "model": config.model, "task": config.task, **run},
            )
        runs.append({"output": split.name or ".", **run})
    summary = {
        "schema_version": RUN_SUMMARY_SCHEMA_VERSION,
        "model": config.model,
        "task": config.task,
        "config": config.to_dict(),
        "runs": runs,
    }
    _write_json(config.output_dir / RUN_SUMMARY_FILENAME, summary)
    return summary


def _fitness(config: RunConfig, split: SplitData):
    base = config.train_config()

    def train_once(lr: float, dropout: float) -> float:
        model = build_model(
            "pso_binary",
            {"dropout": dropout, "backbone": config.backbone.to_dict(), "input_size": config.input_size},
            seed=config.seed,
        )
        _, history = train(model, split.train, split.val, replace(base, lr=lr))
        return min(row.val_loss for row in history.rows)

    return train_once


def run_tune(config: RunConfig, mock: bool = False) -> TuneResult:
    """PSO over (lr, dropout); fitness is the best validation loss of a ``pso_binary`` run."""
    magnification = config.split.resolved_magnification(TUNE_DEFAULT_MAGNIFICATION)
    if mock:
        objective = mock_objective
    else:
        if config.task != "binary":
            raise ConfigError(f"tuning trains the binary pso model; model {config.model} has task {config.task}")
        objective = _fitness(config, _load_split(config, magnification, ""))
    result = pso_tune_hyperparams(objective, HYPERPARAMETER_SPACE, config.pso, threads=worker_threads())
    out_dir = config.output_dir
    _write_text(out_dir / PSO_TRACE_CSV_FILENAME, result.trace_csv())
    render_pso_trace(result.trace, out_dir / PSO_TRACE_FILENAME)
    _write_json(
        out_dir / TUNE_REPORT_FILENAME,
        {
            **result.to_dict(),
            "objective": "mock" if mock else "pso_binary_val_loss",
            "magnification": "synthetic" if config.synthetic is not None and not mock else magnification,
            "swarm": asdict(config.pso),
        },
    )
    return result


def run_evaluate(weights: Path, manifest_path: Path, out_dir: Path, magnification: int | str = "merged") -> MetricsReport:
    model = load_model(weights)
    task = _task_for_labels(model.class_labels)
    manifest = read_manifest(manifest_path)
    if magnification != "merged":
        manifest = split_by_magnification(manifest)[int(magnification)]
    manifest = select_task(manifest, task)
    if len(manifest) == 0:
        raise ConfigError(f"manifest has no {task} records")
    dataset = load_dataset(manifest.records, task, model.input_shape[0], worker_threads(), model.rescale)
    report = evaluate(model, dataset)
    _write_metrics(report, out_dir)
    return report


def _load_classifier(path: Path, expected: str) -> ModelGraph:
    model = load_model(path)
    task = _task_for_labels(model.class_labels)
    if task != expected:
        raise ConfigError(f"{path} is a {task} model, expected a {expected} model")
    return model


def run_predict(binary: Path, benign: Path, malignant: Path, image_path: Path):
    binary_model = _load_classifier(binary, "binary")
    benign_model = _load_classifier(benign, "benign")
    malignant_model = _load_classifier(malignant, "malignant")
    scales = {binary_model.rescale, benign_model.rescale, malignant_model.rescale}
    if len(scales) != 1:
        raise ConfigError(f"models were trained with different rescale values: {sorted(scales)}")
    image = load_image(image_path, binary_model.input_shape[0], binary_model.rescale)
    return hierarchical_predict(binary_model, benign_model, malignant_model, image)


def run_report(history_path: Path, out_dir: Path, confusion_path: Path | None = None) -> list[Path]:
    history = EpochHistory.from_csv(history_path.read_text(encoding="utf-8"))
    confusion = read_confusion_csv(confusion_path.read_text(encoding="utf-8")) if confusion_path else None
    return render_report(history, out_dir, confusion)


# ---- commands ----


def cmd_scan(args: argparse.Namespace) -> int:
    manifest = scan_directory(args.root)
    out = Path(args.out)
    skip_path = Path(args.skipped) if args.skipped else out.with_suffix(".skipped.txt")
    manifest.write(out, skip_path)
    print(json.dumps({"records": len(manifest), "skipped": len(manifest.skipped), "manifest": str(out)}, sort_keys=True))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    summary = run_train(load_run_config(args.config))
    print(json.dumps({"model": summary["model"], "runs": len(summary["runs"])}, sort_keys=True))
    return EXIT_OK


def cmd_tune(args: argparse.Namespace) -> int:
    result = run_tune(load_run_config(args.config), mock=args.mock_objective)
    print(json.dumps(result.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    report = run_evaluate(Path(args.weights), Path(args.manifest), Path(args.out), args.magnification)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    diagnosis = run_predict(Path(args.binary), Path(args.benign), Path(args.malignant), Path(args.image))
    sys.stdout.write(diagnosis.to_text())
    print(json.dumps(diagnosis.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    written = run_report(Path(args.history), Path(args.out), Path(args.confusion) if args.confusion else None)
    print(json.dumps({"written": [str(p) for p in written]}, sort_keys=True))
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    print(json.dumps(RUN_CONFIG_SCHEMA, indent=2, sort_keys=True))
    return EXIT_OK


def _magnification(value: str) -> int | str:
    if value == "merged":
        return value
    try:
        number = int(value)
    except ValueError:
        number = 0
    if number not in MAGNIFICATIONS:
        raise argparse.ArgumentTypeError(f"magnification must be one of {list(MAGNIFICATIONS)} or merged")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="histofuse", description="Breast histopathology classification toolkit.")
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=None, help="default: $HISTOFUSE_LOG_LEVEL or WARNING")
    commands = parser.add_subparsers(dest="command", required=True)

    scan = commands.add_parser("scan", help="Build a manifest CSV from a BreaKHis-style directory tree.")
    scan.add_argument("root")
    scan.add_argument("--out", required=True)
    scan.add_argument("--skipped", default="", help="skip report path (default: <out>.skipped.txt)")
    scan.set_defaults(func=cmd_scan)

    train_cmd = commands.add_parser("train", help="Train a model from a run config.")
    train_cmd.add_argument("--config", required=True)
    train_cmd.set_defaults(func=cmd_train)

    tune = commands.add_parser("tune", help="PSO search over learning rate and dropout.")
    tune.add_argument("--config", required=True)
    tune.add_argument("--mock-objective", action="store_true", help="score with the analytic mock instead of training")
    tune.set_defaults(func=cmd_tune)

    evaluate_cmd = commands.add_parser("evaluate", help="Score saved weights on a manifest.")
    evaluate_cmd.add_argument("--weights", required=True)
    evaluate_cmd.add_argument("--manifest", required=True)
    evaluate_cmd.add_argument("--out", required=True)
    evaluate_cmd.add_argument("--magnification", type=_magnification, default="merged")
    evaluate_cmd.set_defaults(func=cmd_evaluate)

    predict = commands.add_parser("predict", help="Two-stage diagnosis of one image.")
    predict.add_argument("--binary", required=True)
    predict.add_argument("--benign", required=True)
    predict.add_argument("--malignant", required=True)
    predict.add_argument("image")
    predict.set_defaults(func=cmd_predict)

    report = commands.add_parser("report", help="Render curve and confusion SVGs.")
    report.add_argument("--history", required=True)
    report.add_argument("--confusion", default="")
    report.add_argument("--out", required=True)
    report.set_defaults(func=cmd_report)

    schema = commands.add_parser("schema", help="Print the run config JSON schema.")
    schema.set_defaults(func=cmd_schema)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or env_log_level())
    try:
        return int(args.func(args))
    except HistofuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
