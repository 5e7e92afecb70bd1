"""Metadata-conditioned routing and grid search.

Routing inspects only dataset metadata (rows, features, classes): small
datasets keep a zero-shot candidate in the race, wide datasets get a
feature-reduction plan, many-class datasets get a decoder-retraining plan,
and the candidate grid itself follows two leaves (a small-data leaf that
searches epochs, loss and label init at a short prompt, and a large-data
leaf that runs long prompts with ensembling). Variant profiles trade
accuracy for runtime by disabling ensembles past a row cutoff, scaling the
real-context cap with the dataset, training a single epoch, or picking the
feature selector with a cheap zero-shot race instead of the full grid.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .context import FeatureSelectConfig, SketchConfig, apply_transform, select_features, sketch
from .data import TabularDataset
from .errors import ConfigurationError, SearchError
from .metrics import accuracy
from .model import DEFAULT_CONTEXT_BUDGET, PfnConfig, PfnModel, predict_zero_shot
from .prompt import (
    EnsembleSpec,
    TuneConfig,
    extend_classes,
    fit_ensemble,
    init_prompt,
    predict,
    predict_ensemble,
    tune,
)

SMALL_DATA_CUTOFF = 2000       # zero-shot stays in the race up to here
ENSEMBLE_ROW_CUTOFF = 150_000  # medium/light drop ensembling past this
GRID_LIMIT = 30
VARIANTS = ("standard", "medium", "light")
FEATURE_PLANS = ("none", "grid-over-selectors", "preselect-by-zero-shot")
CLASS_PLANS = ("none", "decoder-retrain")
PRESELECT_SKETCH_POINTS = 512


@dataclass(frozen=True)
class VariantProfile:
    name: str
    ensemble_cutoff_samples: int | None = None
    adaptive_sequence: bool = False
    val_subset: bool = False
    patience_override: int | None = None
    epochs_override: int | None = None
    feature_preselect_by_zero_shot: bool = False


def variant_profile(name: str) -> VariantProfile:
    if name == "standard":
        return VariantProfile(name="standard")
    if name == "medium":
        return VariantProfile(name="medium",
                              ensemble_cutoff_samples=ENSEMBLE_ROW_CUTOFF,
                              adaptive_sequence=True, val_subset=True)
    if name == "light":
        return VariantProfile(name="light",
                              ensemble_cutoff_samples=ENSEMBLE_ROW_CUTOFF,
                              adaptive_sequence=True, val_subset=True,
                              epochs_override=1,
                              feature_preselect_by_zero_shot=True)
    raise ConfigurationError(f"unknown variant {name!r}; pick one of {VARIANTS}")


@dataclass
class Candidate:
    tune_cfg: TuneConfig
    ensemble: EnsembleSpec | None = None
    selector: FeatureSelectConfig | None = None
    sketch_cfg: SketchConfig | None = None

    def describe(self) -> dict:
        out = {"tune": self.tune_cfg.to_dict()}
        if self.ensemble is not None:
            out["ensemble"] = {"members": self.ensemble.members,
                               "top_k": self.ensemble.top_k,
                               "seed": self.ensemble.seed}
        if self.selector is not None:
            out["selector"] = {"method": self.selector.method,
                               "d_target": self.selector.d_target,
                               "seed": self.selector.seed}
        return out


@dataclass
class RoutingDecision:
    include_zero_shot: bool
    feature_plan: str
    class_plan: str
    candidate_grid: list[Candidate]
    variant: str = "standard"

    def __post_init__(self):
        if not self.candidate_grid:
            raise ConfigurationError("candidate grid must be non-empty")
        if len(self.candidate_grid) > GRID_LIMIT:
            raise ConfigurationError(
                f"grid of {len(self.candidate_grid)} exceeds the {GRID_LIMIT} cap"
            )

    def to_json(self) -> str:
        return json.dumps({
            "include_zero_shot": self.include_zero_shot,
            "feature_plan": self.feature_plan,
            "class_plan": self.class_plan,
            "variant": self.variant,
            "candidates": [c.describe() for c in self.candidate_grid],
        }, indent=2)

    def configured_epochs(self) -> int:
        """Total training epochs the decision schedules (ensemble members
        multiply their candidate's epochs)."""
        total = 0
        for cand in self.candidate_grid:
            members = cand.ensemble.members if cand.ensemble else 1
            total += cand.tune_cfg.epochs * members
        return total


def _small_leaf(seed: int) -> list[Candidate]:
    grid = []
    for epochs in (7, 60):
        for loss in ("cross-entropy", "kl-to-zero-shot"):
            for label_init in ("equal", "proportional"):
                grid.append(Candidate(tune_cfg=TuneConfig(
                    p=10, lr=3e-2, epochs=epochs, patience=2,
                    warmup_steps=10, val_every=2, max_val_size=2000,
                    train_mode="nct", eval_mode="both", loss=loss,
                    label_init=label_init, seed=seed)))
    return grid


def _large_leaf(seed: int) -> list[Candidate]:
    grid = []
    for train_mode in ("ct", "nct"):
        grid.append(Candidate(
            tune_cfg=TuneConfig(p=1000, lr=1e-3, epochs=100, patience=6,
                                warmup_steps=10, val_every=2, max_val_size=2000,
                                train_mode=train_mode, eval_mode="both",
                                loss="cross-entropy", label_init="equal",
                                seed=seed),
            ensemble=EnsembleSpec(members=10, top_k=2, seed=seed)))
    return grid


def route(metadata: tuple[int, int, int], model_cfg: PfnConfig,
          variant: str = "standard", seed: int = 0) -> RoutingDecision:
    """Build the search plan for (rows, features, classes) metadata."""
    n, d, k = metadata
    profile = variant_profile(variant)
    include_zero_shot = n <= SMALL_DATA_CUTOFF
    if d > model_cfg.d_max:
        feature_plan = ("preselect-by-zero-shot"
                        if profile.feature_preselect_by_zero_shot
                        else "grid-over-selectors")
    else:
        feature_plan = "none"
    class_plan = "decoder-retrain" if k > model_cfg.c_max else "none"
    grid = _small_leaf(seed) if n <= SMALL_DATA_CUTOFF else _large_leaf(seed)

    if feature_plan == "grid-over-selectors":
        expanded = []
        for method in ("random", "mutual-information", "pca"):
            selector = FeatureSelectConfig(method=method,
                                           d_target=model_cfg.d_max, seed=seed)
            for cand in grid:
                expanded.append(replace(cand, selector=selector))
        grid = expanded
    elif feature_plan == "preselect-by-zero-shot":
        # the actual selector is chosen at search time by a zero-shot race;
        # mark every candidate as needing the preselected transform
        grid = [replace(c, selector=FeatureSelectConfig(
            method="random", d_target=model_cfg.d_max, seed=seed))
            for c in grid]

    decision = RoutingDecision(include_zero_shot=include_zero_shot,
                               feature_plan=feature_plan, class_plan=class_plan,
                               candidate_grid=grid, variant=variant)
    return apply_variant(decision, variant, n)


def apply_variant(decision: RoutingDecision, variant: str,
                  n_rows: int) -> RoutingDecision:
    """Rewrite a decision per the variant's runtime deltas."""
    profile = variant_profile(variant)
    grid = []
    for cand in decision.candidate_grid:
        cfg = cand.tune_cfg
        updates: dict = {}
        if profile.adaptive_sequence:
            updates["ctx_upper_bound"] = min(cfg.ctx_upper_bound,
                                             -(-n_rows // 10))
        if profile.val_subset:
            updates["max_val_size"] = min(cfg.max_val_size, 2000)
        if profile.patience_override is not None:
            updates["patience"] = profile.patience_override
        if profile.epochs_override is not None:
            updates["epochs"] = profile.epochs_override
        ensemble = cand.ensemble
        if (ensemble is not None and profile.ensemble_cutoff_samples is not None
                and n_rows > profile.ensemble_cutoff_samples):
            ensemble = EnsembleSpec(members=1, top_k=1, seed=ensemble.seed)
        grid.append(replace(cand, tune_cfg=replace(cfg, **updates),
                            ensemble=ensemble))
    return RoutingDecision(include_zero_shot=decision.include_zero_shot,
                           feature_plan=decision.feature_plan,
                           class_plan=decision.class_plan,
                           candidate_grid=grid, variant=variant)


# -- search execution -------------------------------------------------------------


@dataclass
class LeaderboardRow:
    name: str
    candidate_index: int       # -1 for zero-shot
    validation_accuracy: float
    runtime_s: float
    p: int                     # 0 for zero-shot
    error: str | None = None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "candidate_index": self.candidate_index,
                "validation_accuracy": self.validation_accuracy,
                "runtime_s": self.runtime_s, "p": self.p, "error": self.error,
                "detail": self.detail}


@dataclass
class SearchResult:
    winner: LeaderboardRow
    test_accuracy: float
    leaderboard: list[LeaderboardRow]
    preselected_method: str | None = None

    def to_json(self) -> str:
        return json.dumps({
            "winner": self.winner.to_dict(),
            "test_accuracy": self.test_accuracy,
            "leaderboard": [r.to_dict() for r in self.leaderboard],
            "preselected_method": self.preselected_method,
        }, indent=2)


def _preselect_selector(model: PfnModel, dataset: TabularDataset,
                        d_target: int, seed: int) -> FeatureSelectConfig:
    """Rank feature selectors by zero-shot validation accuracy on a small
    sketch of the training split; keep the winner."""
    from .data import Split

    train_idx = dataset.split.train
    n_sketch = min(PRESELECT_SKETCH_POINTS, len(train_idx))
    picked = sketch(dataset, SketchConfig(method="random", n=n_sketch,
                                          label_mode="proportional", seed=seed),
                    rows=train_idx).indices
    best: tuple[float, str] | None = None
    for method in ("random", "mutual-information", "pca"):
        cfg = FeatureSelectConfig(method=method, d_target=d_target, seed=seed)
        reduced = apply_transform(dataset, select_features(dataset, cfg))
        race_split = Split(train=picked, val=reduced.split.val,
                           test=reduced.split.test)
        sub = reduced.with_features(reduced.features, reduced.columns)
        sub.split = race_split
        try:
            labels, _ = predict_zero_shot(model, sub, rows="val", seed=seed)
            acc = accuracy(labels, reduced.labels[reduced.split.val])
        except Exception:
            continue
        if best is None or acc > best[0]:
            best = (acc, method)
    method = best[1] if best else "random"
    return FeatureSelectConfig(method=method, d_target=d_target, seed=seed)


def _evaluate_candidate(model: PfnModel, dataset: TabularDataset,
                        cand: Candidate, seed: int
                        ) -> tuple[float, float, dict]:
    """Train one candidate, return (val accuracy, test accuracy, detail)."""
    work = dataset
    if cand.selector is not None:
        work = apply_transform(work, select_features(work, cand.selector))
    if dataset.class_count > model.decoder_width:
        model = extend_classes(model, dataset.class_count, seed=cand.tune_cfg.seed)
    if cand.ensemble is not None and cand.ensemble.members > 1:
        ensemble, traces = fit_ensemble(model, work, cand.tune_cfg, cand.ensemble)
        eval_mode = "nc" if cand.tune_cfg.train_mode == "nct" else "c"
        val_labels, _ = predict_ensemble(model, ensemble, work, eval_mode=eval_mode,
                                         rows="val", seed=seed)
        val_acc = accuracy(val_labels, work.labels[work.split.val])
        test_labels, _ = predict_ensemble(model, ensemble, work, eval_mode=eval_mode,
                                          rows="test", seed=seed)
        test_acc = accuracy(test_labels, work.labels[work.split.test])
        detail = {"kind": "ensemble", "members": cand.ensemble.members}
    else:
        prompt = init_prompt(cand.tune_cfg, work, model)
        prompt, trace = tune(model, prompt, work, cand.tune_cfg)
        val_acc = trace.best_accuracy
        test_labels, _ = predict(model, prompt, work,
                                 eval_mode=cand.tune_cfg.eval_mode,
                                 rows="test", seed=seed)
        test_acc = accuracy(test_labels, work.labels[work.split.test])
        detail = {"kind": "prompt", "best_epoch": trace.best_epoch}
    return val_acc, test_acc, detail


def run_search(dataset: TabularDataset, decision: RoutingDecision,
               variant: str, seed: int, model: PfnModel,
               context_budget: int = DEFAULT_CONTEXT_BUDGET) -> SearchResult:
    """Evaluate every candidate on validation, pick the winner, score it on
    test. Ties prefer the smaller prompt, then the lower candidate index;
    the zero-shot entry competes as prompt length 0."""
    leaderboard: list[LeaderboardRow] = []
    test_scores: dict[int, float] = {}
    preselected: str | None = None

    work_decision = decision
    if decision.feature_plan == "preselect-by-zero-shot":
        selector = _preselect_selector(model, dataset, model.config.d_max, seed)
        preselected = selector.method
        work_decision = replace(decision, candidate_grid=[
            replace(c, selector=replace(selector, seed=c.selector.seed
                                        if c.selector else seed))
            for c in decision.candidate_grid])

    if decision.include_zero_shot:
        start = time.perf_counter()
        try:
            labels, _ = predict_zero_shot(model, dataset,
                                          context_budget=context_budget,
                                          rows="val", seed=seed)
            val_acc = accuracy(labels, dataset.labels[dataset.split.val])
            test_labels, _ = predict_zero_shot(model, dataset,
                                               context_budget=context_budget,
                                               rows="test", seed=seed)
            test_scores[-1] = accuracy(test_labels,
                                       dataset.labels[dataset.split.test])
            leaderboard.append(LeaderboardRow(
                name="zero-shot", candidate_index=-1,
                validation_accuracy=val_acc,
                runtime_s=time.perf_counter() - start, p=0))
        except Exception as exc:  # routed budget errors land here
            leaderboard.append(LeaderboardRow(
                name="zero-shot", candidate_index=-1,
                validation_accuracy=float("-inf"),
                runtime_s=time.perf_counter() - start, p=0, error=str(exc)))

    for idx, cand in enumerate(work_decision.candidate_grid):
        start = time.perf_counter()
        try:
            val_acc, test_acc, detail = _evaluate_candidate(model, dataset,
                                                            cand, seed)
            test_scores[idx] = test_acc
            leaderboard.append(LeaderboardRow(
                name=f"candidate-{idx}", candidate_index=idx,
                validation_accuracy=val_acc,
                runtime_s=time.perf_counter() - start,
                p=cand.tune_cfg.p, detail=detail))
        except Exception as exc:
            leaderboard.append(LeaderboardRow(
                name=f"candidate-{idx}", candidate_index=idx,
                validation_accuracy=float("-inf"),
                runtime_s=time.perf_counter() - start,
                p=cand.tune_cfg.p, error=str(exc)))

    viable = [r for r in leaderboard if r.error is None]
    if not viable:
        failures = "; ".join(f"{r.name}: {r.error}" for r in leaderboard)
        raise SearchError(f"every candidate failed: {failures}")
    winner = min(viable, key=lambda r: (-r.validation_accuracy, r.p,
                                        r.candidate_index))
    return SearchResult(winner=winner,
                        test_accuracy=test_scores[winner.candidate_index],
                        leaderboard=leaderboard,
                        preselected_method=preselected)
