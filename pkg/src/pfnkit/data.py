"""Tabular dataset ingestion and preprocessing.

CSV files come in with a header row; categorical columns are dictionary
encoded, every column is z-scored on training-split statistics, missing
cells become 0 after standardization, and rows are split into stratified
train/validation/test index lists. All of it is deterministic in
(file, seed, spec).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParseError, TaskError

MISSING_TOKENS = {"", "?", "na", "n/a", "nan", "null"}


@dataclass
class ColumnMeta:
    name: str
    kind: str  # "numeric" | "categorical" | "component"
    categories: dict[str, int] | None = None
    mean: float = 0.0
    std: float = 1.0

    def decode(self, standardized: np.ndarray) -> np.ndarray:
        """Undo the z-scoring (returns dictionary codes for categoricals)."""
        return standardized * self.std + self.mean


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def as_dict(self) -> dict[str, list[int]]:
        return {"train": self.train.tolist(), "val": self.val.tolist(),
                "test": self.test.tolist()}


@dataclass
class TabularDataset:
    name: str
    features: np.ndarray           # [N x D] float64, preprocessed
    labels: np.ndarray             # [N] int64 in [0, class_count)
    class_count: int
    columns: list[ColumnMeta]
    split: Split
    label_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not np.isfinite(self.features).all():
            raise ParseError(f"{self.name}: non-finite feature values after preprocessing")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.class_count):
            raise TaskError(f"{self.name}: labels outside [0, {self.class_count})")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def split_rows(self, which: str) -> np.ndarray:
        try:
            return getattr(self.split, which)
        except AttributeError:
            raise ConfigurationError(f"unknown split {which!r}") from None

    def column_index(self, name_or_index) -> int:
        if isinstance(name_or_index, int):
            if not (0 <= name_or_index < self.n_features):
                raise ConfigurationError(f"column index {name_or_index} out of range")
            return name_or_index
        for j, col in enumerate(self.columns):
            if col.name == name_or_index:
                return j
        raise ConfigurationError(f"no column named {name_or_index!r}")

    def with_features(self, features: np.ndarray,
                      columns: list[ColumnMeta]) -> "TabularDataset":
        return TabularDataset(name=self.name, features=features, labels=self.labels,
                              class_count=self.class_count, columns=columns,
                              split=self.split, label_names=self.label_names)

    def restrict_rows(self, rows: np.ndarray, split: Split) -> "TabularDataset":
        return TabularDataset(name=self.name, features=self.features[rows],
                              labels=self.labels[rows], class_count=self.class_count,
                              columns=self.columns, split=split,
                              label_names=self.label_names)


def stratified_split(labels: np.ndarray, fractions: tuple[float, float, float],
                     seed: int) -> Split:
    """Split rows into train/val/test keeping class proportions.

    Rows are ordered so that classes interleave evenly (each row keyed by
    its within-class quantile after a seeded shuffle), then cut at the
    global fraction boundaries; this keeps strata proportional for any
    class-size mix.
    """
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ConfigurationError(f"split fractions must be >= 0 and sum to 1: {fractions}")
    labels = np.asarray(labels)
    n = len(labels)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x57A7])
    order = rng.permutation(n)
    keys = np.empty(n)
    for cls in np.unique(labels):
        members = order[labels[order] == cls]
        keys[members] = (np.arange(len(members)) + 0.5) / len(members)
    ranked = np.argsort(keys, kind="stable")
    c1 = int(round(fractions[0] * n))
    c2 = int(round((fractions[0] + fractions[1]) * n))
    return Split(train=np.sort(ranked[:c1]), val=np.sort(ranked[c1:c2]),
                 test=np.sort(ranked[c2:]))


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _try_float(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path: str, label_column: str,
             split_spec: tuple[float, float, float] = (0.7, 0.15, 0.15),
             seed: int = 0, name: str | None = None,
             column_kinds: dict[str, str] | None = None) -> TabularDataset:
    """Read a UTF-8 CSV with a header row into a preprocessed dataset.

    Column kinds are inferred (numeric iff every non-missing cell parses as
    a float) unless forced via ``column_kinds``; forcing a column numeric
    makes unparseable cells a hard error with the row/column address.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append(row)
    if label_column not in header:
        raise ParseError(f"{path}: no column named {label_column!r}")
    if not rows:
        raise TaskError(f"{path}: no data rows")

    label_j = header.index(label_column)
    feature_names = [h for j, h in enumerate(header) if j != label_j]
    cells = [[row[j] for j in range(len(header)) if j != label_j] for row in rows]

    label_values = sorted({row[label_j] for row in rows})
    if len(label_values) < 2:
        raise TaskError(f"{path}: needs at least 2 classes, found {len(label_values)}")
    label_map = {v: i for i, v in enumerate(label_values)}
    labels = np.array([label_map[row[label_j]] for row in rows], dtype=np.int64)

    column_kinds = column_kinds or {}
    n, d = len(rows), len(feature_names)
    raw = np.zeros((n, d))
    missing = np.zeros((n, d), dtype=bool)
    columns: list[ColumnMeta] = []
    for j, col_name in enumerate(feature_names):
        col_cells = [cells[i][j] for i in range(n)]
        forced = column_kinds.get(col_name)
        numeric = all(_is_missing(c) or _try_float(c) is not None for c in col_cells) \
            if forced is None else forced == "numeric"
        if numeric:
            for i, c in enumerate(col_cells):
                if _is_missing(c):
                    missing[i, j] = True
                    continue
                value = _try_float(c)
                if value is None:
                    raise ParseError(
                        f"{path}: row {i + 2}, column {col_name!r}: "
                        f"cannot parse {c!r} as a number"
                    )
                raw[i, j] = value
            columns.append(ColumnMeta(name=col_name, kind="numeric"))
        else:
            cats = sorted({c for c in col_cells if not _is_missing(c)})
            mapping = {c: i for i, c in enumerate(cats)}
            for i, c in enumerate(col_cells):
                if _is_missing(c):
                    missing[i, j] = True
                else:
                    raw[i, j] = mapping[c]
            columns.append(ColumnMeta(name=col_name, kind="categorical",
                                      categories=mapping))

    split = stratified_split(labels, split_spec, seed)

    # z-score every column on training-split statistics; missing cells -> 0
    features = raw.copy()
    train_rows = split.train
    for j, col in enumerate(columns):
        present = ~missing[train_rows, j]
        vals = raw[train_rows, j][present]
        mu = float(vals.mean()) if vals.size else 0.0
        sd = float(vals.std()) if vals.size else 0.0
        col.mean, col.std = mu, (sd if sd > 0.0 else 1.0)
        features[:, j] = (raw[:, j] - col.mean) / col.std
        features[missing[:, j], j] = 0.0

    return TabularDataset(name=name or path, features=features, labels=labels,
                          class_count=len(label_values), columns=columns,
                          split=split, label_names=[str(v) for v in label_values])


def from_arrays(name: str, features: np.ndarray, labels: np.ndarray,
                split_spec: tuple[float, float, float] = (0.7, 0.15, 0.15),
                seed: int = 0, standardize: bool = True,
                column_names: list[str] | None = None) -> TabularDataset:
    """Wrap in-memory arrays as a dataset (for synthetic benchmarks)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or len(labels) != len(features):
        raise ConfigurationError(
            f"features [N x D] and labels [N] required, got "
            f"{features.shape} and {labels.shape}"
        )
    classes = np.unique(labels)
    if len(classes) < 2:
        raise TaskError(f"{name}: needs at least 2 classes")
    if classes.min() < 0 or classes.max() != len(classes) - 1:
        raise TaskError(f"{name}: labels must be 0..K-1 without gaps")
    split = stratified_split(labels, split_spec, seed)
    names = column_names or [f"f{j}" for j in range(features.shape[1])]
    columns = [ColumnMeta(name=names[j], kind="numeric")
               for j in range(features.shape[1])]
    out = features.copy()
    if standardize:
        for j, col in enumerate(columns):
            vals = features[split.train, j]
            col.mean = float(vals.mean())
            sd = float(vals.std())
            col.std = sd if sd > 0.0 else 1.0
            out[:, j] = (features[:, j] - col.mean) / col.std
    return TabularDataset(name=name, features=out, labels=labels,
                          class_count=len(classes), columns=columns, split=split,
                          label_names=[str(c) for c in classes])
