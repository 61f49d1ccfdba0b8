from __future__ import annotations

import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from histofuse import data as data_module
from histofuse.cli import main
from histofuse.data import plant_synthetic_tree, read_manifest
from histofuse.errors import NumericError
from histofuse.models import BackboneConfig, build_model, load_model, save_weights


TINY = BackboneConfig(stem_filters=4, layers_per_block=1, growth_rate=2).to_dict()


def _run(*argv: str) -> tuple[int, str, str]:
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(["--log-level", "ERROR", *argv])
    return code, out.getvalue(), err.getvalue()


def _write_config(directory: Path, payload: dict, name: str = "run.json") -> Path:
    path = directory / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


SYNTHETIC_BASELINE = {
    "model": "baseline",
    "input_size": 32,
    "epochs": 1,
    "batch_size": 4,
    "model_args": {"filters": [4, 4, 4], "kernel": 3},
    "synthetic": {"num_classes": 2, "per_class": 8},
}


class ScanCommandTests(unittest.TestCase):
    def test_scan_writes_manifest_and_skip_report(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp) / "BreaKHis"
            plant_synthetic_tree(root, {"A": 4, "DC": 4}, size=16)
            (root / "benign" / "A" / "notes.txt").write_text("x", encoding="utf-8")
            out = Path(tmp) / "manifest.csv"
            code, stdout, _ = _run("scan", str(root), "--out", str(out))
            self.assertEqual(code, 0)
            self.assertEqual(json.loads(stdout)["records"], 8)
            self.assertEqual(len(read_manifest(out)), 8)
            self.assertTrue(out.with_suffix(".skipped.txt").is_file())

    def test_missing_root_is_a_user_error(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            code, _, stderr = _run("scan", str(Path(tmp) / "absent"), "--out", str(Path(tmp) / "m.csv"))
        self.assertEqual(code, 2)
        self.assertIn("error:", stderr)


class TrainCommandTests(unittest.TestCase):
    def test_synthetic_train_writes_artifacts_deterministically(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(tmp)
            first = _write_config(base, {**SYNTHETIC_BASELINE, "paths": {"output_dir": "first"}}, "first.json")
            second = _write_config(base, {**SYNTHETIC_BASELINE, "paths": {"output_dir": "second"}}, "second.json")
            self.assertEqual(_run("train", "--config", str(first))[0], 0)
            self.assertEqual(_run("train", "--config", str(second))[0], 0)
            for name in ("weights.bin", "weights.json", "history.csv", "metrics.txt", "metrics.csv", "confusion.csv"):
                self.assertTrue((base / "first" / name).is_file(), name)
            self.assertEqual((base / "first" / "weights.bin").read_bytes(), (base / "second" / "weights.bin").read_bytes())
            self.assertEqual((base / "first" / "history.csv").read_text(), (base / "second" / "history.csv").read_text())
            summary = json.loads((base / "first" / "run_summary.json").read_text(encoding="utf-8"))
            self.assertEqual(summary["schema_version"], "histofuse_run_summary_v1")
            self.assertEqual(summary["runs"][0]["epochs_run"], 1)
            self.assertEqual(summary["runs"][0]["val_samples"], 2)

    def test_train_evaluate_and_report_from_manifest(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(tmp)
            plant_synthetic_tree(base / "tree", {"A": 8, "DC": 8}, size=40)
            manifest = base / "manifest.csv"
            self.assertEqual(_run("scan", str(base / "tree"), "--out", str(manifest))[0], 0)
            payload = {key: value for key, value in SYNTHETIC_BASELINE.items() if key != "synthetic"}
            config = _write_config(base, {**payload, "paths": {"manifest": "manifest.csv", "output_dir": "run"}})
            self.assertEqual(_run("train", "--config", str(config))[0], 0)
            summary = json.loads((base / "run" / "run_summary.json").read_text(encoding="utf-8"))
            self.assertEqual(summary["runs"][0]["train_samples"] + summary["runs"][0]["val_samples"], 16)

            code, stdout, _ = _run(
                "evaluate", "--weights", str(base / "run" / "weights.bin"), "--manifest", str(manifest),
                "--out", str(base / "eval"), "--magnification", "40",
            )
            self.assertEqual(code, 0)
            self.assertIn("samples=4\n", stdout)
            self.assertTrue((base / "eval" / "confusion.csv").is_file())

            code, stdout, _ = _run(
                "report", "--history", str(base / "run" / "history.csv"),
                "--confusion", str(base / "eval" / "confusion.csv"), "--out", str(base / "figures"),
            )
            self.assertEqual(code, 0)
            self.assertEqual(len(json.loads(stdout)["written"]), 2)
            curves = (base / "figures" / "curves.svg").read_text(encoding="utf-8")
            for gid in ("train_acc", "val_acc", "train_loss", "val_loss"):
                self.assertIn(f'id="{gid}"', curves)
            self.assertIn('id="cell_1_1"', (base / "figures" / "confusion.svg").read_text(encoding="utf-8"))

    def test_augmentation_rescale_reaches_the_model_card(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(tmp)
            plant_synthetic_tree(base / "tree", {"A": 4, "DC": 4}, size=32)
            self.assertEqual(_run("scan", str(base / "tree"), "--out", str(base / "manifest.csv"))[0], 0)
            payload = {key: value for key, value in SYNTHETIC_BASELINE.items() if key != "synthetic"}
            config = _write_config(
                base,
                {
                    **payload,
                    "augmentation": {"rescale": 0.5 / 255, "width_shift": 0.0, "height_shift": 0.0, "shear": 0.0,
                                     "zoom": 0.0, "horizontal_flip": False},
                    "paths": {"manifest": "manifest.csv", "output_dir": "run"},
                },
            )
            self.assertEqual(_run("train", "--config", str(config))[0], 0)
            card = json.loads((base / "run" / "weights.json").read_text(encoding="utf-8"))
            self.assertAlmostEqual(card["rescale"], 0.5 / 255)
            self.assertAlmostEqual(load_model(base / "run" / "weights.bin").rescale, 0.5 / 255)

            loaded = []
            original = data_module.load_image

            def spy(path, size, rescale=data_module.DEFAULT_RESCALE):
                loaded.append(rescale)
                return original(path, size, rescale)

            with mock.patch("histofuse.data.load_image", side_effect=spy):
                code, _, _ = _run("evaluate", "--weights", str(base / "run" / "weights.bin"),
                                  "--manifest", str(base / "manifest.csv"), "--out", str(base / "eval"))
            self.assertEqual(code, 0)
            self.assertTrue(loaded)
            self.assertTrue(all(abs(value - 0.5 / 255) < 1e-12 for value in loaded))

    def test_per_magnification_training(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(tmp)
            plant_synthetic_tree(base / "tree", {"A": 8, "DC": 8}, size=32)
            self.assertEqual(_run("scan", str(base / "tree"), "--out", str(base / "manifest.csv"))[0], 0)
            payload = {key: value for key, value in SYNTHETIC_BASELINE.items() if key != "synthetic"}
            config = _write_config(
                base,
                {
                    **payload,
                    "split": {"per_magnification": True, "val_fraction": 0.5},
                    "paths": {"manifest": "manifest.csv", "output_dir": "run"},
                },
            )
            self.assertEqual(_run("train", "--config", str(config))[0], 0)
            summary = json.loads((base / "run" / "run_summary.json").read_text(encoding="utf-8"))
            self.assertEqual([run["output"] for run in summary["runs"]], ["mag_40", "mag_100", "mag_200", "mag_400"])
            for run in summary["runs"]:
                self.assertEqual((run["train_samples"], run["val_samples"]), (2, 2))
                self.assertTrue((base / "run" / run["output"] / "weights.bin").is_file())
                self.assertTrue((base / "run" / run["output"] / "run_summary.json").is_file())

    def test_config_errors_exit_two(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(tmp)
            bad = _write_config(base, {**SYNTHETIC_BASELINE, "epochz": 3})
            code, _, stderr = _run("train", "--config", str(bad))
            self.assertEqual(code, 2)
            self.assertIn("epochz: unknown key", stderr)
            self.assertEqual(_run("train", "--config", str(base / "missing.json"))[0], 2)

    def test_numeric_failure_exits_three(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            config = _write_config(Path(tmp), {**SYNTHETIC_BASELINE, "paths": {"output_dir": "out"}})
            with mock.patch("histofuse.cli.train", side_effect=NumericError("loss is nan", epoch=1, batch=2)):
                code, _, stderr = _run("train", "--config", str(config))
        self.assertEqual(code, 3)
        self.assertIn("loss is nan", stderr)


class TuneCommandTests(unittest.TestCase):
    def test_mock_objective_tune(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(tmp)
            config = _write_config(
                base,
                {
                    "model": "pso_binary",
                    "synthetic": {"num_classes": 2, "per_class": 4},
                    "pso": {"swarm_size": 6, "iterations": 3},
                    "paths": {"output_dir": "tune"},
                },
            )
            code, stdout, _ = _run("tune", "--config", str(config), "--mock-objective")
            self.assertEqual(code, 0)
            result = json.loads(stdout)
            self.assertTrue(1e-5 <= result["best_lr"] <= 1e-2)
            self.assertTrue(0.3 <= result["best_dropout"] <= 0.7)
            report = json.loads((base / "tune" / "tune_report.json").read_text(encoding="utf-8"))
            self.assertEqual(report["objective"], "mock")
            self.assertEqual(report["magnification"], 40)
            self.assertEqual(len((base / "tune" / "pso_trace.csv").read_text(encoding="utf-8").splitlines()), 5)
            self.assertIn('id="best_fitness"', (base / "tune" / "pso_trace.svg").read_text(encoding="utf-8"))


class PredictCommandTests(unittest.TestCase):
    def test_two_stage_prediction(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(tmp)
            images = plant_synthetic_tree(base / "tree", {"PT": 1}, size=48)
            binary = save_weights(build_model("baseline", {"input_size": 32, "filters": [2, 2, 2], "kernel": 3}),
                                  base / "binary.bin")
            benign = save_weights(build_model("fusion_benign", {"input_size": 32, "backbone": TINY}), base / "benign.bin")
            malignant = save_weights(build_model("subclass_initial", {"input_size": 32, "task": "malignant"}),
                                     base / "malignant.bin")
            code, stdout, _ = _run(
                "predict", "--binary", str(binary), "--benign", str(benign), "--malignant", str(malignant),
                str(images[0]),
            )
            self.assertEqual(code, 0)
            text, payload = stdout.split("{", 1)
            diagnosis = json.loads("{" + payload)
            self.assertIn(diagnosis["binary_class"], ("benign", "malignant"))
            self.assertAlmostEqual(sum(diagnosis["subtype_probabilities"].values()), 1.0, places=6)
            self.assertIn("subtype: ", text)

            code, _, stderr = _run(
                "predict", "--binary", str(binary), "--benign", str(malignant), "--malignant", str(benign),
                str(images[0]),
            )
            self.assertEqual(code, 2)
            self.assertIn("expected a benign model", stderr)

            card_path = base / "benign.json"
            card = json.loads(card_path.read_text(encoding="utf-8"))
            card_path.write_text(json.dumps({**card, "rescale": 1.0}), encoding="utf-8")
            code, _, stderr = _run(
                "predict", "--binary", str(binary), "--benign", str(benign), "--malignant", str(malignant),
                str(images[0]),
            )
            self.assertEqual(code, 2)
            self.assertIn("different rescale", stderr)


class SchemaCommandTests(unittest.TestCase):
    def test_schema_is_printed(self) -> None:
        code, stdout, _ = _run("schema")
        self.assertEqual(code, 0)
        schema = json.loads(stdout)
        self.assertEqual(schema["$id"], "histofuse_run_config_v1")
        self.assertIn("augmentation", schema["properties"])


if __name__ == "__main__":
    unittest.main()
