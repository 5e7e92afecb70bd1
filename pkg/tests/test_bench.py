import json

import numpy as np
import pytest

from pfnkit.bench import BenchSuite, export_decision_grid, grid_predictor, run_bench
from pfnkit.errors import ConfigurationError, DimensionError
from tests.conftest import make_blobs


class TestSuiteLoading:
    def test_relative_paths_resolve(self, tmp_path):
        csv = tmp_path / "x.csv"
        csv.write_text("a,label\n1,0\n2,1\n3,0\n4,1\n", encoding="utf-8")
        suite_path = tmp_path / "suite.json"
        suite_path.write_text(json.dumps({
            "datasets": [{"path": "x.csv", "label_column": "label"}],
            "folds": 2,
        }), encoding="utf-8")
        suite = BenchSuite.load(str(suite_path))
        assert suite.folds == 2
        assert suite.datasets[0].path == str(csv)

    def test_empty_suite_rejected(self, tmp_path):
        suite_path = tmp_path / "s.json"
        suite_path.write_text(json.dumps({"datasets": []}), encoding="utf-8")
        with pytest.raises(ConfigurationError):
            BenchSuite.load(str(suite_path))


class TestDecisionGrid:
    def test_constant_predictor_rows_identical(self, tmp_path):
        out = str(tmp_path / "g.csv")

        def constant(points):
            return np.tile([0.25, 0.75], (len(points), 1))

        xs, ys, probs = export_decision_grid(constant, (0, 1, 0, 1), 3, out)
        assert len(xs) == 9
        rows = open(out).read().strip().splitlines()
        assert len(rows) == 10
        payload = {tuple(r.split(",")[2:]) for r in rows[1:]}
        assert len(payload) == 1  # all probability rows identical

    def test_resolution_row_count(self, tmp_path):
        out = str(tmp_path / "g.csv")

        def uniform(points):
            return np.full((len(points), 3), 1 / 3)

        export_decision_grid(uniform, (-1, 1, -1, 1), 5, out)
        assert len(open(out).read().strip().splitlines()) == 26

    def test_bad_bounds(self, tmp_path):
        def f(points):
            return np.ones((len(points), 2)) / 2

        with pytest.raises(DimensionError):
            export_decision_grid(f, (1, 0, 0, 1), 3, str(tmp_path / "x.csv"))
        with pytest.raises(DimensionError):
            export_decision_grid(f, (0, 1, 0), 3, str(tmp_path / "x.csv"))  # type: ignore[arg-type]

    def test_separable_boundary_between_blobs(self, small_model, tmp_path):
        ds = make_blobs(seed=41, n=500, spread=0.7)
        predictor = grid_predictor(small_model, ds, context_budget=128, seed=1)
        out = str(tmp_path / "blob_grid.csv")
        xs, ys, probs = export_decision_grid(predictor, (-5, 5, -5, 5), 21, out)
        cls = probs.argmax(axis=1)
        # corners deep inside each blob territory get that blob's class
        lo_corner = np.argmin(xs + ys)
        hi_corner = np.argmax(xs + ys)
        assert cls[lo_corner] == 0
        assert cls[hi_corner] == 1
        # the argmax flips somewhere between the centers along the diagonal
        diag = np.isclose(xs, ys)
        diag_cls = cls[diag]
        assert diag_cls.min() == 0 and diag_cls.max() == 1

    def test_non_2d_dataset_rejected(self, small_model):
        rng = np.random.default_rng(0)
        from pfnkit.data import from_arrays
        ds = from_arrays("d3", rng.standard_normal((40, 3)),
                         np.arange(40) % 2, seed=0)
        with pytest.raises(DimensionError):
            grid_predictor(small_model, ds)


class TestRunBench:
    def test_rows_per_fold_and_runtime_fields(self, small_model, tmp_path):
        rng = np.random.default_rng(7)
        csv = tmp_path / "b.csv"
        lines = ["x0,x1,label"]
        for _ in range(240):
            y = int(rng.integers(0, 2))
            c = 2.5 if y else -2.5
            lines.append(f"{rng.normal(c):.4f},{rng.normal(c):.4f},{y}")
        csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
        suite_path = tmp_path / "suite.json"
        suite_path.write_text(json.dumps({
            "datasets": [{"name": "blobs", "path": "b.csv",
                          "label_column": "label"}],
            "folds": 2, "seed": 3, "context_budget": 96,
        }), encoding="utf-8")
        suite = BenchSuite.load(str(suite_path))
        report = run_bench(small_model, suite, "light")
        tuned = [r for r in report.rows if r.algorithm == "tuned-light"]
        zs = [r for r in report.rows if r.algorithm == "zero-shot"]
        assert len(tuned) == 2 and len(zs) == 2
        assert all(r.runtime_s > 0 for r in tuned)
        assert {r.fold for r in tuned} == {0, 1}
