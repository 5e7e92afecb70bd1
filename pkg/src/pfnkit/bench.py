"""Benchmark suite execution and decision-grid export.

A suite file lists datasets (CSV path plus label column); the runner
routes each one, executes the grid search per fold with fold-specific
splits, and appends rows to a JSON-lines report. The decision-grid export
rasterizes a 2D predictor into a CSV of class probabilities for plotting.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .data import TabularDataset, load_csv
from .errors import ConfigurationError, DimensionError
from .metrics import ExperimentReport, ReportRow
from .model import DEFAULT_CONTEXT_BUDGET, PfnModel, predict_zero_shot
from .search import route, run_search


@dataclass
class SuiteEntry:
    name: str
    path: str
    label_column: str
    split_spec: tuple[float, float, float] = (0.7, 0.15, 0.15)


@dataclass
class BenchSuite:
    datasets: list[SuiteEntry]
    folds: int = 3
    seed: int = 0
    include_zero_shot_baseline: bool = True
    context_budget: int = DEFAULT_CONTEXT_BUDGET

    @staticmethod
    def load(path: str) -> "BenchSuite":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not raw.get("datasets"):
            raise ConfigurationError(f"{path}: suite lists no datasets")
        entries = []
        base = os.path.dirname(os.path.abspath(path))
        for d in raw["datasets"]:
            csv_path = d["path"]
            if not os.path.isabs(csv_path):
                csv_path = os.path.join(base, csv_path)
            entries.append(SuiteEntry(
                name=d.get("name", os.path.basename(csv_path)),
                path=csv_path, label_column=d["label_column"],
                split_spec=tuple(d.get("split", (0.7, 0.15, 0.15)))))
        return BenchSuite(datasets=entries, folds=int(raw.get("folds", 3)),
                          seed=int(raw.get("seed", 0)),
                          include_zero_shot_baseline=bool(
                              raw.get("include_zero_shot_baseline", True)),
                          context_budget=int(raw.get("context_budget",
                                                     DEFAULT_CONTEXT_BUDGET)))


def run_bench(model: PfnModel, suite: BenchSuite, variant: str,
              report: ExperimentReport | None = None,
              on_row=None) -> ExperimentReport:
    """Execute the suite; one tuned row (and optionally one zero-shot row)
    per (dataset, fold). Fold f reuses the dataset with split seed
    suite.seed + f."""
    report = report if report is not None else ExperimentReport()
    for entry in suite.datasets:
        for fold in range(suite.folds):
            split_seed = suite.seed + fold
            dataset = load_csv(entry.path, entry.label_column,
                               split_spec=entry.split_spec, seed=split_seed,
                               name=entry.name)
            meta = (dataset.n_rows, dataset.n_features, dataset.class_count)
            decision = route(meta, model.config, variant, seed=split_seed)
            start = time.perf_counter()
            result = run_search(dataset, decision, variant, split_seed, model,
                                context_budget=suite.context_budget)
            elapsed = time.perf_counter() - start
            row = ReportRow(dataset=entry.name, algorithm=f"tuned-{variant}",
                            fold=fold, accuracy=result.test_accuracy,
                            runtime_s=elapsed,
                            extra={"winner": result.winner.name,
                                   "val_accuracy":
                                       result.winner.validation_accuracy})
            report.add(row)
            if on_row:
                on_row(row)
            if suite.include_zero_shot_baseline:
                start = time.perf_counter()
                try:
                    labels, _ = predict_zero_shot(
                        model, dataset, context_budget=suite.context_budget,
                        rows="test", seed=split_seed)
                    acc = float((labels ==
                                 dataset.labels[dataset.split.test]).mean())
                    zs_row = ReportRow(dataset=entry.name, algorithm="zero-shot",
                                       fold=fold, accuracy=acc,
                                       runtime_s=time.perf_counter() - start)
                except Exception as exc:
                    zs_row = ReportRow(dataset=entry.name, algorithm="zero-shot",
                                       fold=fold, accuracy=float("nan"),
                                       runtime_s=time.perf_counter() - start,
                                       extra={"error": str(exc)})
                report.add(zs_row)
                if on_row:
                    on_row(zs_row)
    return report


def export_decision_grid(predict_fn, bounds: tuple[float, float, float, float],
                         resolution: int, out_csv: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rasterize a 2D predictor onto a lattice and write (x, y, p_0..p_{k-1}).

    ``predict_fn`` maps an [m x 2] array to an [m x k] probability matrix.
    Returns the lattice coordinates and probabilities for further rendering.
    """
    if len(bounds) != 4:
        raise DimensionError(f"bounds must be (xmin, xmax, ymin, ymax), got {bounds}")
    xmin, xmax, ymin, ymax = bounds
    if not (xmin < xmax and ymin < ymax):
        raise DimensionError(f"degenerate bounds {bounds}")
    if resolution < 2:
        raise DimensionError(f"resolution must be >= 2, got {resolution}")
    gx = np.linspace(xmin, xmax, resolution)
    gy = np.linspace(ymin, ymax, resolution)
    xx, yy = np.meshgrid(gx, gy)
    points = np.column_stack([xx.ravel(), yy.ravel()])
    probs = np.asarray(predict_fn(points), dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != len(points):
        raise DimensionError(
            f"predictor returned shape {probs.shape} for {len(points)} points"
        )
    k = probs.shape[1]
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"] + [f"p_{c}" for c in range(k)])
        for (x, y), row in zip(points, probs):
            writer.writerow([repr(float(x)), repr(float(y))]
                            + [repr(float(v)) for v in row])
    return points[:, 0], points[:, 1], probs


def grid_predictor(model: PfnModel, dataset: TabularDataset, prompt=None,
                   eval_mode: str = "nc", context_budget: int = 512,
                   seed: int = 0):
    """Adapter: a 2D-point predictor backed by a (possibly prompt-tuned) model.

    The dataset must have exactly two feature columns; lattice points are
    standardized with the dataset's column statistics before encoding.
    """
    if dataset.n_features != 2:
        raise DimensionError(
            f"decision grids need a 2-feature dataset, got {dataset.n_features}"
        )
    from .model import _batched_forward, class_slice
    from .prompt import _capped_budget, _context_rows

    mu = np.array([c.mean for c in dataset.columns])
    sd = np.array([c.std for c in dataset.columns])

    def predict_points(points: np.ndarray) -> np.ndarray:
        z = (np.asarray(points, dtype=np.float64) - mu) / sd
        if prompt is None:
            ctx = _context_rows(dataset, min(context_budget,
                                             len(dataset.split.train)), seed)
            probs = _batched_forward(model, dataset.features[ctx],
                                     dataset.labels[ctx], z)
        elif eval_mode == "nc":
            probs = _batched_forward(model, np.zeros((0, 2)),
                                     np.zeros(0, dtype=np.int64), z,
                                     prompt=prompt)
        else:
            budget = _capped_budget(model, prompt.p, context_budget)
            ctx = _context_rows(dataset, budget, seed)
            probs = _batched_forward(model, dataset.features[ctx],
                                     dataset.labels[ctx], z, prompt=prompt)
        return class_slice(probs, dataset.class_count)

    return predict_points
