"""Command-line interface.

Subcommands: pretrain, tune, predict, sketch, select-features, fair-tune,
bench, stats, grid-export. Inputs are JSON configs and CSV datasets;
outputs (checkpoints, prompts, reports, grids) land in the --out directory.
Report-producing commands also render PNG figures next to their delimited
outputs. --seed threads determinism end to end. Exit codes: 0 success,
1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import figures
from .bench import BenchSuite, export_decision_grid, grid_predictor, run_bench
from .context import FeatureSelectConfig, SketchConfig, select_features, sketch, sketch_quality
from .data import load_csv
from .errors import PfnError
from .fairness import FairnessSpec, tune_fair
from .metrics import ExperimentReport, mean_rank_and_wins, significance_suite, zscore_table
from .model import (
    DEFAULT_CONTEXT_BUDGET,
    PfnConfig,
    PfnModel,
    load_checkpoint,
    predict_zero_shot,
    pretrain,
    save_checkpoint,
)
from .prior import PriorConfig, task_stream
from .prompt import TuneConfig, load_prompt, predict, save_prompt
from .search import route, run_search


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map to 1
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="pfnkit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="fit a backbone on synthetic tasks")
    p.add_argument("--config", help="prior config JSON (defaults used if omitted)")
    p.add_argument("--model-config", help="model config JSON")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint directory")

    p = sub.add_parser("tune", help="route and grid-search tuned prompts")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="CSV dataset")
    p.add_argument("--label-column", default="label")
    p.add_argument("--variant", choices=("standard", "medium", "light"),
                   default="standard")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="predict with a saved prompt or zero-shot")
    p.add_argument("--model", required=True)
    p.add_argument("--prompt", help="prompt directory (omit for zero-shot)")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--mode", choices=("nc", "c", "both"), default="nc")
    p.add_argument("--context-budget", type=int, default=DEFAULT_CONTEXT_BUDGET)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sketch", help="select context rows from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--method", choices=("random", "kmeans", "coreset-fps"),
                   default="random")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--label-mode", choices=("proportional", "equal"),
                   default="proportional")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("select-features", help="fit a feature transform")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--method", choices=("random", "mutual-information", "pca"),
                   default="mutual-information")
    p.add_argument("--d-target", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fair-tune", help="prompt tuning with a parity penalty")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--spec", required=True, help="fairness spec JSON")
    p.add_argument("--tune-config", help="tune config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--model", required=True)
    p.add_argument("--suite", required=True, help="suite JSON")
    p.add_argument("--variant", choices=("standard", "medium", "light"),
                   default="standard")
    p.add_argument("--seed", type=int, default=None,
                   help="override the suite seed")
    p.add_argument("--out", required=True)

    p = sub.add_parser("stats", help="aggregate a results report")
    p.add_argument("--report", required=True, help="JSON-lines report")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", required=True)

    p = sub.add_parser("grid-export", help="export a 2D decision grid")
    p.add_argument("--model", required=True)
    p.add_argument("--prompt", help="prompt directory (omit for zero-shot)")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--bounds", type=float, nargs=4,
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--mode", choices=("nc", "c"), default="nc")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _load_model(path: str) -> PfnModel:
    return load_checkpoint(path)


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _cmd_pretrain(args) -> int:
    prior = PriorConfig() if not args.config else PriorConfig.from_json(
        open(args.config, encoding="utf-8").read())
    model_cfg = PfnConfig() if not args.model_config else PfnConfig.from_dict(
        json.load(open(args.model_config, encoding="utf-8")))
    model = PfnModel(model_cfg, seed=args.seed)
    model, trace = pretrain(model, task_stream(prior, args.seed),
                            steps=args.steps, lr=args.lr, seed=args.seed)
    out = _ensure_dir(args.out)
    save_checkpoint(model, out)
    with open(os.path.join(out, "loss_trace.json"), "w", encoding="utf-8") as fh:
        json.dump({"losses": trace.losses, "steps": trace.steps,
                   "seed": trace.seed}, fh)
    figures.render_loss_trace(trace.losses,
                              os.path.join(out, "loss_trace.png"))
    print(f"checkpoint written to {out} "
          f"(final loss {np.mean(trace.losses[-50:]):.4f})")
    return 0


def _cmd_tune(args) -> int:
    model = _load_model(args.model)
    dataset = load_csv(args.data, args.label_column, seed=args.seed)
    meta = (dataset.n_rows, dataset.n_features, dataset.class_count)
    decision = route(meta, model.config, args.variant, seed=args.seed)
    result = run_search(dataset, decision, args.variant, args.seed, model)
    out = _ensure_dir(args.out)
    with open(os.path.join(out, "decision.json"), "w", encoding="utf-8") as fh:
        fh.write(decision.to_json())
    with open(os.path.join(out, "leaderboard.json"), "w", encoding="utf-8") as fh:
        fh.write(result.to_json())
    # refit the winning tuned candidate to persist its prompt
    if result.winner.candidate_index >= 0:
        from .prompt import fit_ensemble, init_prompt, save_ensemble, tune
        cand = decision.candidate_grid[result.winner.candidate_index]
        if cand.ensemble is not None and cand.ensemble.members > 1:
            ensemble, _ = fit_ensemble(model, dataset, cand.tune_cfg,
                                       cand.ensemble)
            save_ensemble(ensemble, os.path.join(out, "ensemble"))
        else:
            prompt = init_prompt(cand.tune_cfg, dataset, model)
            prompt, _ = tune(model, prompt, dataset, cand.tune_cfg)
            save_prompt(prompt, os.path.join(out, "prompt"), cand.tune_cfg)
    report = ExperimentReport()
    from .metrics import ReportRow
    report.add(ReportRow(dataset=dataset.name, algorithm=f"tuned-{args.variant}",
                         fold=0, accuracy=result.test_accuracy,
                         runtime_s=sum(r.runtime_s for r in result.leaderboard),
                         extra={"winner": result.winner.name}))
    report.save(os.path.join(out, "report.jsonl"))
    rows = [r for r in result.leaderboard if r.error is None]
    figures.render_leaderboard([r.name for r in rows],
                               [r.validation_accuracy for r in rows],
                               os.path.join(out, "leaderboard.png"))
    print(f"winner: {result.winner.name} "
          f"(val {result.winner.validation_accuracy:.4f}, "
          f"test {result.test_accuracy:.4f}); artifacts in {out}")
    return 0


def _cmd_predict(args) -> int:
    model = _load_model(args.model)
    dataset = load_csv(args.data, args.label_column, seed=args.seed)
    if args.prompt:
        prompt, _ = load_prompt(args.prompt)
        labels, probs = predict(model, prompt, dataset, eval_mode=args.mode,
                                context_budget=args.context_budget,
                                rows="test", seed=args.seed)
    else:
        labels, probs = predict_zero_shot(model, dataset,
                                          context_budget=args.context_budget,
                                          rows="test", seed=args.seed)
    out = _ensure_dir(args.out)
    path = os.path.join(out, "predictions.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "predicted", "actual"]
                        + [f"p_{c}" for c in range(probs.shape[1])])
        for i, (row_id, label) in enumerate(zip(dataset.split.test, labels)):
            writer.writerow([int(row_id), int(label),
                             int(dataset.labels[row_id])]
                            + [repr(float(v)) for v in probs[i]])
    acc = float((labels == dataset.labels[dataset.split.test]).mean())
    print(f"test accuracy {acc:.4f}; predictions in {path}")
    return 0


def _cmd_sketch(args) -> int:
    dataset = load_csv(args.data, args.label_column, seed=args.seed)
    cfg = SketchConfig(method=args.method, n=args.n, label_mode=args.label_mode,
                       seed=args.seed)
    result = sketch(dataset, cfg, rows=dataset.split.train)
    quality = sketch_quality(dataset, result.indices,
                             rows=dataset.split.train)
    out = _ensure_dir(args.out)
    path = os.path.join(out, "sketch.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({
            "method": args.method, "n": args.n, "label_mode": args.label_mode,
            "seed": args.seed, "clamped": result.clamped,
            "indices": result.indices.tolist(),
            "quality": {
                "min_pairwise_distance": quality.min_pairwise_distance,
                "per_class_counts": quality.per_class_counts,
                "coverage_radius": quality.coverage_radius,
            },
        }, fh, indent=2)
    print(f"{len(result.indices)} rows selected; written to {path}")
    return 0


def _cmd_select_features(args) -> int:
    dataset = load_csv(args.data, args.label_column, seed=args.seed)
    cfg = FeatureSelectConfig(method=args.method, d_target=args.d_target,
                              seed=args.seed)
    transform = select_features(dataset, cfg)
    out = _ensure_dir(args.out)
    path = os.path.join(out, "transform.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(transform.to_json())
    print(f"{args.method} transform (d_target={args.d_target}) written to {path}")
    return 0


def _cmd_fair_tune(args) -> int:
    model = _load_model(args.model)
    dataset = load_csv(args.data, args.label_column, seed=args.seed)
    spec = FairnessSpec.from_json(open(args.spec, encoding="utf-8").read())
    if args.tune_config:
        cfg = TuneConfig.from_dict(json.load(open(args.tune_config,
                                                  encoding="utf-8")))
    else:
        cfg = TuneConfig(seed=args.seed)
    prompt, report = tune_fair(model, dataset, cfg, spec)
    out = _ensure_dir(args.out)
    save_prompt(prompt, os.path.join(out, "prompt"), cfg)
    rep = ExperimentReport()
    from .metrics import ReportRow
    rep.add(ReportRow(dataset=dataset.name, algorithm="fair-tuned", fold=0,
                      accuracy=report.accuracy,
                      extra={"dp": report.dp, "lambda": spec.lam,
                             "skipped_penalty_batches":
                                 report.skipped_penalty_batches}))
    rep.save(os.path.join(out, "report.jsonl"))
    print(f"accuracy {report.accuracy:.4f}, parity gap {report.dp:.4f}; "
          f"artifacts in {out}")
    return 0


def _cmd_bench(args) -> int:
    model = _load_model(args.model)
    suite = BenchSuite.load(args.suite)
    if args.seed is not None:
        suite.seed = args.seed
    out = _ensure_dir(args.out)
    report_path = os.path.join(out, "report.jsonl")
    report = run_bench(model, suite, args.variant)
    report.save(report_path)
    by_alg: dict[str, list[float]] = {}
    for row in report.rows:
        if np.isfinite(row.accuracy):
            by_alg.setdefault(row.algorithm, []).append(row.accuracy)
    names = list(by_alg)
    figures.render_leaderboard(names,
                               [float(np.mean(by_alg[a])) for a in names],
                               os.path.join(out, "bench.png"),
                               title="mean test accuracy")
    print(f"{len(report.rows)} rows written to {report_path}")
    return 0


def _cmd_stats(args) -> int:
    report = ExperimentReport.load(args.report)
    out = _ensure_dir(args.out)
    z = zscore_table(report)
    ranks = mean_rank_and_wins(report)
    summary = {
        "algorithms": report.algorithms(),
        "datasets": report.datasets(),
        "mean_accuracy": {alg: float(np.mean(
            [r.accuracy for r in report.rows if r.algorithm == alg]))
            for alg in report.algorithms()},
        "zscores": z["summary"],
        "rank_and_wins": ranks,
    }
    sig = None
    if len(report.algorithms()) >= 3 and len(report.datasets()) >= 6:
        sig = significance_suite(report, alpha=args.alpha)
        summary["friedman"] = {"chi2": sig.friedman_chi2, "p": sig.friedman_p}
        summary["pairwise"] = {f"{a}|{b}": v
                               for (a, b), v in sig.pairwise.items()}
        summary["groups"] = sig.groups
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    csv_path = os.path.join(out, "summary.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "mean_accuracy", "mean_rank", "wins",
                         "mean_z", "std_z", "median_z"])
        for alg in report.algorithms():
            writer.writerow([
                alg, repr(summary["mean_accuracy"][alg]),
                repr(ranks[alg]["mean_rank"]), repr(ranks[alg]["wins"]),
                repr(z["summary"][alg]["mean"]), repr(z["summary"][alg]["std"]),
                repr(z["summary"][alg]["median"]),
            ])
    if sig is not None:
        figures.render_critical_difference(
            sig.mean_ranks, sig.groups, os.path.join(out, "critical_difference.png"))
    names = report.algorithms()
    figures.render_leaderboard(names,
                               [summary["mean_accuracy"][a] for a in names],
                               os.path.join(out, "mean_accuracy.png"),
                               title="mean test accuracy")
    print(f"summary written to {out}")
    return 0


def _cmd_grid_export(args) -> int:
    model = _load_model(args.model)
    dataset = load_csv(args.data, args.label_column, seed=args.seed)
    prompt = None
    if args.prompt:
        prompt, _ = load_prompt(args.prompt)
    predictor = grid_predictor(model, dataset, prompt=prompt,
                               eval_mode=args.mode, seed=args.seed)
    if args.bounds:
        bounds = tuple(args.bounds)
    else:
        raw0 = dataset.columns[0].decode(dataset.features[:, 0])
        raw1 = dataset.columns[1].decode(dataset.features[:, 1])
        pad0 = 0.1 * (raw0.max() - raw0.min() or 1.0)
        pad1 = 0.1 * (raw1.max() - raw1.min() or 1.0)
        bounds = (raw0.min() - pad0, raw0.max() + pad0,
                  raw1.min() - pad1, raw1.max() + pad1)
    out = _ensure_dir(args.out)
    csv_path = os.path.join(out, "grid.csv")
    xs, ys, probs = export_decision_grid(predictor, bounds, args.resolution,
                                         csv_path)
    train = dataset.split.train
    scatter = (dataset.columns[0].decode(dataset.features[train, 0]),
               dataset.columns[1].decode(dataset.features[train, 1]),
               dataset.labels[train])
    figures.render_decision_grid(xs, ys, probs,
                                 os.path.join(out, "grid.png"),
                                 scatter=scatter,
                                 title=f"decision grid: {dataset.name}")
    print(f"{args.resolution}x{args.resolution} grid written to {csv_path}")
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "tune": _cmd_tune,
    "predict": _cmd_predict,
    "sketch": _cmd_sketch,
    "select-features": _cmd_select_features,
    "fair-tune": _cmd_fair_tune,
    "bench": _cmd_bench,
    "stats": _cmd_stats,
    "grid-export": _cmd_grid_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (PfnError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:  # console script
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
