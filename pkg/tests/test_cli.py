import json
import os

import numpy as np
import pytest

from pfnkit.cli import main
from pfnkit.model import save_checkpoint
from tests.conftest import make_blobs


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory, small_model):
    path = str(tmp_path_factory.mktemp("ckpt"))
    save_checkpoint(small_model, path)
    return path


@pytest.fixture(scope="module")
def blobs_csv(tmp_path_factory):
    rng = np.random.default_rng(0)
    path = tmp_path_factory.mktemp("data") / "blobs.csv"
    lines = ["x0,x1,label"]
    for _ in range(300):
        y = int(rng.integers(0, 2))
        cx = 2.5 if y else -2.5
        lines.append(f"{rng.normal(cx):.5f},{rng.normal(cx):.5f},c{y}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


class TestUsage:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["sketch", "--frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_subcommand(self):
        assert main([]) == 1

    def test_runtime_failure_is_exit_2(self, tmp_path):
        assert main(["stats", "--report", str(tmp_path / "missing.jsonl"),
                     "--out", str(tmp_path)]) == 2


class TestPretrainCli:
    def test_pretrain_writes_checkpoint(self, tmp_path, capsys):
        prior = {
            "d_max": 4, "c_max": 3, "n_total": 48,
            "feature_count_range": [2, 3], "class_count_range": [2, 3],
            "label_noise": 0.0, "kind_weights": [0.0, 0.5, 0.5],
        }
        model_cfg = {"e": 16, "layers": 1, "heads": 2, "ff_mult": 2,
                     "d_max": 4, "c_max": 3, "n_ctx_max": 256}
        prior_path = tmp_path / "prior.json"
        prior_path.write_text(json.dumps(prior), encoding="utf-8")
        mc_path = tmp_path / "model.json"
        mc_path.write_text(json.dumps(model_cfg), encoding="utf-8")
        out = tmp_path / "ckpt"
        code = main(["pretrain", "--config", str(prior_path),
                     "--model-config", str(mc_path), "--steps", "5",
                     "--seed", "1", "--out", str(out)])
        assert code == 0
        assert (out / "manifest.json").exists()
        assert (out / "params.bin").exists()
        assert (out / "loss_trace.json").exists()
        assert (out / "loss_trace.png").exists()


class TestPipelineCli:
    def test_tune_then_predict(self, model_dir, blobs_csv, tmp_path):
        out = tmp_path / "tuned"
        code = main(["tune", "--model", model_dir, "--data", blobs_csv,
                     "--variant", "light", "--seed", "3",
                     "--out", str(out)])
        assert code == 0
        assert (out / "decision.json").exists()
        assert (out / "leaderboard.json").exists()
        assert (out / "leaderboard.png").exists()
        assert (out / "report.jsonl").exists()
        leaderboard = json.loads((out / "leaderboard.json").read_text())
        assert leaderboard["winner"]["validation_accuracy"] > 0.5
        prompt_dir = out / "prompt"
        if prompt_dir.exists():
            pred_out = tmp_path / "pred"
            code = main(["predict", "--model", model_dir, "--prompt",
                         str(prompt_dir), "--data", blobs_csv, "--mode", "nc",
                         "--out", str(pred_out)])
            assert code == 0
            assert (pred_out / "predictions.csv").exists()

    def test_zero_shot_predict(self, model_dir, blobs_csv, tmp_path):
        out = tmp_path / "zs"
        code = main(["predict", "--model", model_dir, "--data", blobs_csv,
                     "--context-budget", "64", "--out", str(out)])
        assert code == 0
        lines = (out / "predictions.csv").read_text().strip().splitlines()
        assert lines[0].startswith("row,predicted,actual")
        assert len(lines) > 1


class TestSketchCli:
    def test_sketch_writes_quality(self, blobs_csv, tmp_path):
        out = tmp_path / "sk"
        code = main(["sketch", "--data", blobs_csv, "--method", "coreset-fps",
                     "--n", "12", "--seed", "2", "--out", str(out)])
        assert code == 0
        payload = json.loads((out / "sketch.json").read_text())
        assert len(payload["indices"]) == 12
        assert payload["quality"]["coverage_radius"] > 0

    def test_select_features(self, blobs_csv, tmp_path):
        out = tmp_path / "fs"
        code = main(["select-features", "--data", blobs_csv, "--method", "pca",
                     "--d-target", "1", "--out", str(out)])
        assert code == 0
        payload = json.loads((out / "transform.json").read_text())
        assert payload["method"] == "pca"
        assert len(payload["components"]) == 2  # D x d_target nested list


class TestFairTuneCli:
    def test_fair_tune(self, model_dir, tmp_path):
        rng = np.random.default_rng(5)
        lines = ["f0,f1,group,label"]
        for _ in range(400):
            g = int(rng.integers(0, 2))
            y = int(rng.random() < (0.58 if g else 0.42))
            f0 = rng.normal(1.0 if y else -1.0)
            lines.append(f"{f0:.5f},{rng.normal():.5f},{g},{y}")
        csv_path = tmp_path / "fair.csv"
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        spec = {"protected_column": "group", "protected_value": "1",
                "positive_class": 1, "lambda": 1.0}
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec), encoding="utf-8")
        tune_cfg = {"p": 4, "epochs": 2, "val_every": 1, "patience": 2,
                    "warmup_steps": 2, "nct_batch_points": 64, "seed": 5,
                    "train_mode": "nct", "eval_mode": "both",
                    "loss": "cross-entropy", "label_init": "equal",
                    "lr": 0.03, "max_val_size": 2000, "ctx_upper_bound": 256}
        cfg_path = tmp_path / "tune.json"
        cfg_path.write_text(json.dumps(tune_cfg), encoding="utf-8")
        out = tmp_path / "fair-out"
        code = main(["fair-tune", "--model", model_dir, "--data",
                     str(csv_path), "--spec", str(spec_path),
                     "--tune-config", str(cfg_path), "--out", str(out)])
        assert code == 0
        rows = (out / "report.jsonl").read_text().strip().splitlines()
        payload = json.loads(rows[0])
        assert "dp" in payload["extra"]


class TestBenchAndStatsCli:
    def test_bench_then_stats(self, model_dir, blobs_csv, tmp_path):
        suite = {"datasets": [{"name": "blobs", "path": blobs_csv,
                               "label_column": "label"}],
                 "folds": 2, "seed": 1, "context_budget": 128}
        suite_path = tmp_path / "suite.json"
        suite_path.write_text(json.dumps(suite), encoding="utf-8")
        out = tmp_path / "bench"
        code = main(["bench", "--model", model_dir, "--suite", str(suite_path),
                     "--variant", "light", "--out", str(out)])
        assert code == 0
        report_path = out / "report.jsonl"
        rows = [json.loads(l) for l in
                report_path.read_text().strip().splitlines()]
        assert len(rows) == 4  # 2 folds x (tuned + zero-shot)
        assert all("runtime_s" in r for r in rows)
        assert (out / "bench.png").exists()

        stats_out = tmp_path / "stats"
        code = main(["stats", "--report", str(report_path), "--out",
                     str(stats_out)])
        assert code == 0
        summary = json.loads((stats_out / "summary.json").read_text())
        assert set(summary["mean_accuracy"]) == {"tuned-light", "zero-shot"}
        assert (stats_out / "summary.csv").exists()
        assert (stats_out / "mean_accuracy.png").exists()

    def test_stats_matches_library(self, tmp_path):
        from pfnkit.metrics import ExperimentReport, ReportRow, zscore_table
        rows = []
        rng = np.random.default_rng(0)
        for d in range(8):
            base = rng.random() * 0.3 + 0.5
            for alg, off in (("a", 0.1), ("b", 0.05), ("c", 0.0)):
                rows.append(ReportRow(dataset=f"d{d}", algorithm=alg, fold=0,
                                      accuracy=base + off))
        rep = ExperimentReport(rows)
        report_path = tmp_path / "toy.jsonl"
        rep.save(str(report_path))
        out = tmp_path / "stats2"
        assert main(["stats", "--report", str(report_path),
                     "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        lib = zscore_table(rep)["summary"]
        for alg in ("a", "b", "c"):
            assert summary["zscores"][alg]["mean"] == \
                pytest.approx(lib[alg]["mean"])
        assert summary["friedman"]["p"] < 0.05
        assert (out / "critical_difference.png").exists()


class TestGridExportCli:
    def test_grid_export(self, model_dir, blobs_csv, tmp_path):
        out = tmp_path / "grid"
        code = main(["grid-export", "--model", model_dir, "--data", blobs_csv,
                     "--resolution", "8", "--out", str(out)])
        assert code == 0
        lines = (out / "grid.csv").read_text().strip().splitlines()
        assert lines[0].startswith("x,y,p_0")
        assert len(lines) == 1 + 64
        assert (out / "grid.png").exists()

    def test_non_2d_rejected(self, model_dir, tmp_path):
        rng = np.random.default_rng(1)
        lines = ["a,b,c,label"]
        for i in range(40):
            lines.append(",".join(f"{v:.4f}" for v in rng.standard_normal(3))
                         + f",{i % 2}")
        path = tmp_path / "threed.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        assert main(["grid-export", "--model", model_dir, "--data", str(path),
                     "--out", str(tmp_path / "g")]) == 2
