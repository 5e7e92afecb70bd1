"""Benchmark metrics, rank statistics and significance tests.

Scores live in an experiment report of (dataset, algorithm, fold) rows.
Aggregation follows the usual benchmark conventions: per-dataset z-scores
with population standard deviation, average ranks with ties sharing the
mean rank, fractional win counts for multi-way ties, a Friedman test over
rank sums, pairwise Wilcoxon signed-rank tests (exact distribution up to
20 paired differences, a continuity-corrected normal approximation
beyond), and a Holm step-down adjustment for the multiple comparisons.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _scipy_stats

from .errors import CompletenessError, MetricError, StatisticsError

WILCOXON_EXACT_LIMIT = 20


def accuracy(predicted, actual) -> float:
    """Fraction of positions where the two label vectors agree."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise MetricError(
            f"length mismatch: {predicted.shape} vs {actual.shape}"
        )
    if predicted.size == 0:
        raise MetricError("accuracy of empty label vectors")
    return float((predicted == actual).mean())


# -- report container ------------------------------------------------------------


@dataclass
class ReportRow:
    dataset: str
    algorithm: str
    fold: int
    accuracy: float
    runtime_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "dataset": self.dataset, "algorithm": self.algorithm,
            "fold": self.fold, "accuracy": self.accuracy,
            "runtime_s": self.runtime_s, "extra": self.extra,
        })

    @staticmethod
    def from_json(line: str) -> "ReportRow":
        raw = json.loads(line)
        return ReportRow(dataset=raw["dataset"], algorithm=raw["algorithm"],
                         fold=int(raw["fold"]), accuracy=float(raw["accuracy"]),
                         runtime_s=float(raw.get("runtime_s", 0.0)),
                         extra=raw.get("extra", {}))


class ExperimentReport:
    """Append-only rows plus recomputable aggregate summaries."""

    def __init__(self, rows: list[ReportRow] | None = None):
        self.rows: list[ReportRow] = list(rows or [])

    def add(self, row: ReportRow) -> None:
        self.rows.append(row)

    def datasets(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.rows:
            seen.setdefault(r.dataset)
        return list(seen)

    def algorithms(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.rows:
            seen.setdefault(r.algorithm)
        return list(seen)

    def folds(self) -> list[int]:
        return sorted({r.fold for r in self.rows})

    def score(self, dataset: str, algorithm: str, fold: int) -> float:
        for r in self.rows:
            if (r.dataset, r.algorithm, r.fold) == (dataset, algorithm, fold):
                return r.accuracy
        raise CompletenessError(
            f"missing result for dataset={dataset!r}, algorithm={algorithm!r}, "
            f"fold={fold}"
        )

    def mean_score(self, dataset: str, algorithm: str) -> float:
        vals = [r.accuracy for r in self.rows
                if r.dataset == dataset and r.algorithm == algorithm]
        if not vals:
            raise CompletenessError(
                f"no results for dataset={dataset!r}, algorithm={algorithm!r}"
            )
        return float(np.mean(vals))

    # persistence: JSON-lines, append-friendly and lossless

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.rows:
                fh.write(row.to_json() + "\n")

    @staticmethod
    def load(path: str) -> "ExperimentReport":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(ReportRow.from_json(line))
        return ExperimentReport(rows)


# -- aggregation -------------------------------------------------------------------


def zscore_table(report: ExperimentReport) -> dict:
    """Standardize scores within each dataset, then summarize per algorithm.

    Per dataset the (fold-averaged) scores of all algorithms are shifted to
    mean 0 and scaled by the population standard deviation; a dataset where
    every algorithm ties contributes zeros.
    """
    datasets = report.datasets()
    algorithms = report.algorithms()
    if len(algorithms) < 2:
        raise StatisticsError("z-scores need at least 2 algorithms")
    per_dataset: dict[str, dict[str, float]] = {}
    for ds in datasets:
        scores = np.array([report.mean_score(ds, alg) for alg in algorithms])
        std = scores.std()  # population
        z = (scores - scores.mean()) / std if std > 0 else np.zeros_like(scores)
        per_dataset[ds] = dict(zip(algorithms, z.tolist()))
    summary = {}
    for alg in algorithms:
        zs = np.array([per_dataset[ds][alg] for ds in datasets])
        summary[alg] = {"mean": float(zs.mean()), "std": float(zs.std()),
                        "median": float(np.median(zs))}
    return {"per_dataset": per_dataset, "summary": summary}


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """Ranks with 1 = best (highest score); ties share the average rank."""
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(len(scores))
    i = 0
    position = 1
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        avg = (position + position + (j - i)) / 2.0
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        position += j - i + 1
        i = j + 1
    return ranks


def mean_rank_and_wins(report: ExperimentReport) -> dict[str, dict[str, float]]:
    """Average rank and fractional win count per algorithm.

    Ranks are computed per (dataset, fold) with ties sharing the average
    rank; a k-way tie for the best score awards 1/k of a win to each.
    Fold wins are averaged within a dataset, then summed across datasets.
    """
    datasets = report.datasets()
    algorithms = report.algorithms()
    folds = report.folds()
    rank_sum = {alg: 0.0 for alg in algorithms}
    cells = 0
    wins_total = {alg: 0.0 for alg in algorithms}
    for ds in datasets:
        fold_wins = {alg: [] for alg in algorithms}
        for fold in folds:
            scores = np.array([report.score(ds, alg, fold) for alg in algorithms])
            ranks = _average_ranks(scores)
            best = scores.max()
            winners = np.nonzero(scores == best)[0]
            for idx, alg in enumerate(algorithms):
                rank_sum[alg] += ranks[idx]
                fold_wins[alg].append(1.0 / len(winners) if idx in winners else 0.0)
            cells += 1
        for alg in algorithms:
            wins_total[alg] += float(np.mean(fold_wins[alg]))
    return {alg: {"mean_rank": rank_sum[alg] / cells,
                  "wins": wins_total[alg]} for alg in algorithms}


# -- significance ---------------------------------------------------------------------


def wilcoxon_signed_rank(x, y) -> tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test for paired samples.

    Zero differences are dropped; tied absolute differences share average
    ranks. With at most 20 remaining pairs the p-value is exact (dynamic
    program over the signed-rank distribution conditioned on the observed
    rank multiset); beyond that a normal approximation with tie correction
    and a continuity correction is used. Returns (W+, p).
    """
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = _average_ranks(-np.abs(d))  # rank 1 = smallest |d|
    w_plus = float(ranks[d > 0].sum())
    if n <= WILCOXON_EXACT_LIMIT:
        return w_plus, _wilcoxon_exact_p(ranks, w_plus)
    mu = n * (n + 1) / 4.0
    ties = _tie_counts(np.abs(d))
    sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - sum(t ** 3 - t for t in ties) / 48.0
    sigma = math.sqrt(sigma2)
    if sigma == 0.0:
        return w_plus, 1.0
    z = (w_plus - mu - 0.5 * math.copysign(1.0, w_plus - mu)) / sigma
    p = 2.0 * (0.5 * math.erfc(abs(z) / math.sqrt(2.0)))
    return w_plus, min(1.0, p)


def _tie_counts(values: np.ndarray) -> list[int]:
    _, counts = np.unique(values, return_counts=True)
    return [int(c) for c in counts if c > 1]


def _wilcoxon_exact_p(ranks: np.ndarray, w_plus: float) -> float:
    """Exact two-sided p over all 2^n sign assignments of the observed ranks.

    Tied ranks are half-integers, so everything is doubled to stay in
    integer arithmetic; the distribution is built by convolving one rank at
    a time.
    """
    doubled = np.rint(ranks * 2).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:len(counts) - r]
        counts = counts + shifted
    n_assignments = 2.0 ** len(ranks)
    w2 = int(round(w_plus * 2))
    p_le = float(counts[:w2 + 1].sum()) / n_assignments
    p_ge = float(counts[w2:].sum()) / n_assignments
    return min(1.0, 2.0 * min(p_le, p_ge))


def friedman_test(scores: np.ndarray) -> tuple[float, float]:
    """Friedman chi-square over rank sums for an [n_datasets x k] score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    n, k = scores.shape
    if k < 3:
        raise StatisticsError(f"Friedman test needs >= 3 algorithms, got {k}")
    if n < 2:
        raise StatisticsError(f"Friedman test needs >= 2 datasets, got {n}")
    rank_sums = np.zeros(k)
    for i in range(n):
        rank_sums += _average_ranks(scores[i])
    chi2 = 12.0 / (n * k * (k + 1)) * float((rank_sums ** 2).sum()) - 3.0 * n * (k + 1)
    chi2 = max(chi2, 0.0)
    p = float(_scipy_stats.chi2.sf(chi2, df=k - 1)) if chi2 > 0 else 1.0
    return chi2, p


def holm_adjust(p_values: list[float]) -> list[float]:
    """Holm step-down adjustment; output is monotone and >= the raw values."""
    m = len(p_values)
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted = [0.0] * m
    running = 0.0
    for step, idx in enumerate(order):
        running = max(running, (m - step) * p_values[idx])
        adjusted[idx] = min(1.0, running)
    return adjusted


@dataclass
class SignificanceResult:
    friedman_chi2: float
    friedman_p: float
    pairwise: dict[tuple[str, str], dict[str, float]]
    groups: list[list[str]]
    mean_ranks: dict[str, float]


def significance_suite(report: ExperimentReport, alpha: float = 0.05
                       ) -> SignificanceResult:
    """Friedman test, Holm-adjusted pairwise Wilcoxon tests and the cliques
    of mutually indistinguishable algorithms (for critical-difference plots).
    """
    algorithms = report.algorithms()
    datasets = report.datasets()
    if len(algorithms) < 3:
        raise StatisticsError(
            f"significance suite needs >= 3 algorithms, got {len(algorithms)}"
        )
    if len(datasets) < 6:
        raise StatisticsError(
            f"significance suite needs >= 6 datasets, got {len(datasets)}"
        )
    matrix = np.array([[report.mean_score(ds, alg) for alg in algorithms]
                       for ds in datasets])
    chi2, fried_p = friedman_test(matrix)

    pairs = [(a, b) for i, a in enumerate(algorithms)
             for b in algorithms[i + 1:]]
    raw = []
    stats = []
    for a, b in pairs:
        ia, ib = algorithms.index(a), algorithms.index(b)
        w, p = wilcoxon_signed_rank(matrix[:, ia], matrix[:, ib])
        raw.append(p)
        stats.append(w)
    adjusted = holm_adjust(raw)
    pairwise = {}
    for (a, b), w, p_raw, p_adj in zip(pairs, stats, raw, adjusted):
        pairwise[(a, b)] = {"statistic": float(w), "p_raw": float(p_raw),
                            "p_adjusted": float(p_adj),
                            "significant": bool(p_adj < alpha)}

    rank_matrix = np.array([_average_ranks(matrix[i]) for i in range(len(datasets))])
    mean_ranks = dict(zip(algorithms, rank_matrix.mean(axis=0).tolist()))
    groups = _nonsignificant_groups(algorithms, mean_ranks, pairwise, alpha)
    return SignificanceResult(friedman_chi2=chi2, friedman_p=fried_p,
                              pairwise=pairwise, groups=groups,
                              mean_ranks=mean_ranks)


def _nonsignificant_groups(algorithms, mean_ranks, pairwise, alpha):
    """Maximal rank-contiguous runs whose pairs are all non-significant."""
    ordered = sorted(algorithms, key=lambda a: mean_ranks[a])

    def distinct(a, b):
        key = (a, b) if (a, b) in pairwise else (b, a)
        return pairwise[key]["significant"]

    runs = []
    for i in range(len(ordered)):
        j = i
        while j + 1 < len(ordered) and not any(
                distinct(ordered[t], ordered[j + 1]) for t in range(i, j + 1)):
            j += 1
        runs.append((i, j))
    maximal = [(i, j) for (i, j) in runs
               if not any(oi <= i and j <= oj and (oi, oj) != (i, j)
                          for (oi, oj) in runs)]
    out = []
    seen = set()
    for i, j in maximal:
        group = ordered[i:j + 1]
        key = tuple(group)
        if key not in seen:
            seen.add(key)
            out.append(group)
    return out
