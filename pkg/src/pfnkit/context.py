"""Classical context compression: row sketching and feature selection.

Sketches reduce a large training set to a small context (seeded random
sampling with label-aware stratification, Lloyd k-means medoids, or a
farthest-point coreset). Feature selection reduces wide tables to the
model's feature budget (random subset, histogram mutual information, or
PCA). Everything is a pure function of (data, config), so a serialized
transform replays exactly at test time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import ColumnMeta, TabularDataset
from .errors import ConfigurationError, TransformError

SKETCH_METHODS = ("random", "kmeans", "coreset-fps")
SELECT_METHODS = ("random", "mutual-information", "pca")
FPS_INITIAL_POINTS = 5


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, salt])


@dataclass(frozen=True)
class SketchConfig:
    method: str = "random"
    n: int = 512
    label_mode: str = "proportional"  # "proportional" | "equal"
    seed: int = 0

    def __post_init__(self):
        if self.method not in SKETCH_METHODS:
            raise ConfigurationError(f"unknown sketch method {self.method!r}")
        if self.label_mode not in ("proportional", "equal"):
            raise ConfigurationError(f"unknown label mode {self.label_mode!r}")
        if self.n < 1:
            raise ConfigurationError(f"sketch size must be >= 1, got {self.n}")


@dataclass(frozen=True)
class FeatureSelectConfig:
    method: str = "mutual-information"
    d_target: int = 20
    seed: int = 0
    mi_bins: int = 16

    def __post_init__(self):
        if self.method not in SELECT_METHODS:
            raise ConfigurationError(f"unknown selection method {self.method!r}")
        if self.d_target < 1:
            raise ConfigurationError(f"d_target must be >= 1, got {self.d_target}")
        if self.mi_bins < 2:
            raise ConfigurationError(f"mi_bins must be >= 2, got {self.mi_bins}")


@dataclass
class SketchResult:
    indices: np.ndarray          # absolute dataset row ids, in selection order
    clamped: bool = False        # n exceeded the available rows
    inertia_trace: list[float] = field(default_factory=list)  # kmeans only


# -- sketching ---------------------------------------------------------------------


def sketch(dataset: TabularDataset, cfg: SketchConfig,
           rows: np.ndarray | None = None,
           fps_initial: np.ndarray | None = None) -> SketchResult:
    """Pick context rows from ``rows`` (default: all rows of the dataset)."""
    pool = np.arange(dataset.n_rows) if rows is None else np.asarray(rows, dtype=np.int64)
    if pool.size == 0:
        raise ConfigurationError("cannot sketch an empty row set")
    x = dataset.features[pool]
    y = dataset.labels[pool]
    if cfg.method == "random":
        return _random_sketch(pool, y, cfg)
    if cfg.method == "kmeans":
        local, trace = _kmeans_medoids(x, min(cfg.n, pool.size), cfg.seed)
        return SketchResult(indices=pool[local], clamped=cfg.n > pool.size,
                            inertia_trace=trace)
    local = _fps(x, min(cfg.n, pool.size), cfg.seed, forced_initial=fps_initial)
    return SketchResult(indices=pool[local], clamped=cfg.n > pool.size)


def _proportional_counts(class_sizes: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder apportionment of n picks across classes."""
    total = class_sizes.sum()
    quotas = n * class_sizes / total
    counts = np.floor(quotas).astype(int)
    remainder = n - counts.sum()
    if remainder > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def _random_sketch(pool: np.ndarray, y: np.ndarray, cfg: SketchConfig) -> SketchResult:
    rng = _rng(cfg.seed, 0x5CE7)
    classes, sizes = np.unique(y, return_counts=True)
    k = len(classes)
    clamped = False
    picks: list[np.ndarray] = []
    if cfg.label_mode == "proportional":
        n = cfg.n
        if n > pool.size:
            n, clamped = pool.size, True
        counts = _proportional_counts(sizes, n)
        for cls, want in zip(classes, counts):
            members = np.nonzero(y == cls)[0]
            take = min(want, members.size)
            picks.append(rng.choice(members, size=take, replace=False))
    else:
        # equal: ceil(n/k) per class, truncated to n total; minority classes
        # are oversampled with replacement
        per_class = -(-cfg.n // k)
        budget = cfg.n
        for cls in classes:
            want = min(per_class, budget)
            budget -= want
            members = np.nonzero(y == cls)[0]
            if members.size >= want:
                picks.append(rng.choice(members, size=want, replace=False))
            else:
                picks.append(rng.choice(members, size=want, replace=True))
    local = np.concatenate(picks) if picks else np.zeros(0, dtype=np.int64)
    return SketchResult(indices=pool[local], clamped=clamped)


def _kmeans_medoids(x: np.ndarray, k: int, seed: int,
                    tol: float = 1e-6, max_iter: int = 100
                    ) -> tuple[np.ndarray, list[float]]:
    """Lloyd iterations to convergence, then the nearest real row per center.

    Medoids (not synthetic centers) are returned because context rows must
    carry labels.
    """
    rng = _rng(seed, 0x4EA5)
    n = x.shape[0]
    centers = x[rng.choice(n, size=k, replace=False)].copy()
    trace: list[float] = []
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), assign].sum())
        trace.append(inertia)
        new_centers = centers.copy()
        for j in range(k):
            members = x[assign == j]
            if members.size:
                new_centers[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-covered point
                new_centers[j] = x[d2[np.arange(n), assign].argmax()]
        if len(trace) >= 2 and abs(trace[-2] - trace[-1]) <= tol:
            centers = new_centers
            break
        centers = new_centers
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    medoids = d2.argmin(axis=0)
    return medoids.astype(np.int64), trace


def _fps(x: np.ndarray, n: int, seed: int,
         forced_initial: np.ndarray | None = None) -> np.ndarray:
    """Farthest-point coreset: seed a few random rows, then repeatedly add the
    row whose distance to the selected set is largest."""
    rng = _rng(seed, 0xF95)
    total = x.shape[0]
    if forced_initial is not None:
        selected = list(np.asarray(forced_initial, dtype=np.int64)[:n])
    else:
        k0 = min(FPS_INITIAL_POINTS, n, total)
        selected = list(rng.choice(total, size=k0, replace=False))
    dist = np.full(total, np.inf)
    for s in selected:
        dist = np.minimum(dist, np.linalg.norm(x - x[s], axis=1))
    while len(selected) < n:
        nxt = int(dist.argmax())
        selected.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(x - x[nxt], axis=1))
    return np.asarray(selected, dtype=np.int64)


# -- feature selection ---------------------------------------------------------------


@dataclass
class FeatureTransform:
    method: str
    seed: int
    source_columns: list[str]
    indices: list[int] | None = None        # index methods
    mean: np.ndarray | None = None          # pca
    components: np.ndarray | None = None    # pca, [D x d_target]
    warning: str | None = None

    def to_json(self) -> str:
        payload = {"method": self.method, "seed": self.seed,
                   "source_columns": self.source_columns,
                   "warning": self.warning}
        if self.indices is not None:
            payload["indices"] = list(map(int, self.indices))
        if self.mean is not None:
            payload["mean"] = self.mean.tolist()
            payload["components"] = self.components.tolist()
        return json.dumps(payload, indent=2)

    @staticmethod
    def from_json(text: str) -> "FeatureTransform":
        raw = json.loads(text)
        return FeatureTransform(
            method=raw["method"], seed=raw["seed"],
            source_columns=raw["source_columns"],
            indices=raw.get("indices"),
            mean=np.asarray(raw["mean"]) if "mean" in raw else None,
            components=np.asarray(raw["components"]) if "components" in raw else None,
            warning=raw.get("warning"),
        )


def histogram_mutual_information(feature: np.ndarray, labels: np.ndarray,
                                 bins: int = 16) -> float:
    """MI (nats) between an equal-width binning of a feature and the labels."""
    lo, hi = feature.min(), feature.max()
    if hi <= lo:
        return 0.0
    binned = np.minimum(((feature - lo) / (hi - lo) * bins).astype(int), bins - 1)
    classes = np.unique(labels)
    n = len(labels)
    mi = 0.0
    for b in np.unique(binned):
        in_bin = binned == b
        pb = in_bin.mean()
        for c in classes:
            joint = (in_bin & (labels == c)).sum() / n
            if joint > 0.0:
                pc = (labels == c).mean()
                mi += joint * np.log(joint / (pb * pc))
    return float(max(mi, 0.0))


def select_features(dataset: TabularDataset, cfg: FeatureSelectConfig) -> FeatureTransform:
    """Fit a width-reducing transform on the training split."""
    d = dataset.n_features
    if cfg.method != "pca" and cfg.d_target > d:
        raise ConfigurationError(
            f"d_target {cfg.d_target} exceeds the {d} available columns"
        )
    if cfg.method == "pca" and cfg.d_target > d:
        raise ConfigurationError(
            f"d_target {cfg.d_target} exceeds the {d}-dimensional input"
        )
    names = [c.name for c in dataset.columns]
    train = dataset.split.train
    x = dataset.features[train]
    y = dataset.labels[train]

    if cfg.method == "random":
        rng = _rng(cfg.seed, 0xFEA7)
        idx = rng.choice(d, size=cfg.d_target, replace=False)
        return FeatureTransform(method="random", seed=cfg.seed,
                                source_columns=names, indices=list(map(int, idx)))
    if cfg.method == "mutual-information":
        warning = None
        if len(np.unique(y)) < 2:
            scores = np.zeros(d)
            warning = "constant labels: MI scores all zero, falling back to column order"
        else:
            scores = np.array([
                histogram_mutual_information(x[:, j], y, cfg.mi_bins)
                for j in range(d)
            ])
        order = np.lexsort((np.arange(d), -scores))  # ties resolved by column index
        return FeatureTransform(method="mutual-information", seed=cfg.seed,
                                source_columns=names,
                                indices=list(map(int, order[:cfg.d_target])),
                                warning=warning)
    # pca
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / max(len(x), 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:cfg.d_target]
    components = eigvecs[:, order]
    # deterministic sign: largest-magnitude loading of each component positive
    for j in range(components.shape[1]):
        pivot = np.abs(components[:, j]).argmax()
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    return FeatureTransform(method="pca", seed=cfg.seed, source_columns=names,
                            mean=mean, components=components)


def apply_transform(dataset: TabularDataset, transform: FeatureTransform) -> TabularDataset:
    """Project or subset columns; labels and splits are untouched."""
    names = [c.name for c in dataset.columns]
    if names != transform.source_columns:
        raise TransformError(
            f"column schema mismatch: transform built for {transform.source_columns}, "
            f"dataset has {names}"
        )
    if transform.indices is not None:
        idx = list(transform.indices)
        features = dataset.features[:, idx].copy()
        columns = [dataset.columns[j] for j in idx]
        return dataset.with_features(features, columns)
    projected = (dataset.features - transform.mean) @ transform.components
    columns = [ColumnMeta(name=f"pc{j}", kind="component")
               for j in range(projected.shape[1])]
    return dataset.with_features(projected, columns)


# -- diagnostics -----------------------------------------------------------------------


@dataclass
class SketchSummary:
    min_pairwise_distance: float
    per_class_counts: dict[int, int]
    coverage_radius: float


def sketch_quality(dataset: TabularDataset, indices: np.ndarray,
                   rows: np.ndarray | None = None) -> SketchSummary:
    """Geometric and class-balance summary of a selection.

    Coverage radius is measured over ``rows`` (default: the whole dataset):
    the largest distance from any row to its nearest selected row.
    """
    indices = np.asarray(indices, dtype=np.int64)
    pool = np.arange(dataset.n_rows) if rows is None else np.asarray(rows)
    chosen = dataset.features[indices]
    if len(indices) >= 2:
        diffs = chosen[:, None, :] - chosen[None, :, :]
        dists = np.sqrt((diffs ** 2).sum(axis=2))
        np.fill_diagonal(dists, np.inf)
        min_pairwise = float(dists.min())
    else:
        min_pairwise = float("inf")
    counts: dict[int, int] = {}
    for label in dataset.labels[indices]:
        counts[int(label)] = counts.get(int(label), 0) + 1
    all_d = np.linalg.norm(
        dataset.features[pool][:, None, :] - chosen[None, :, :], axis=2)
    coverage = float(all_d.min(axis=1).max())
    return SketchSummary(min_pairwise_distance=min_pairwise,
                         per_class_counts=counts, coverage_radius=coverage)
