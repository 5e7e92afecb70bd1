"""Synthetic task generation for prior fitting.

A hypothesis is drawn from a small family of generative processes
(random MLP, Gaussian mixture, linear threshold), then a labeled dataset
is sampled from it and split into a context part and a held-out part.
Streams of such tasks drive pretraining. Everything is a pure function of
(config, seed), so tasks are bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigurationError, DegenerateTaskError

KINDS = ("random-mlp", "gaussian-mixture", "linear-threshold")

_SPLIT_RETRIES = 32
_HYPOTHESIS_RETRIES = 64


def _rng(*path: int) -> np.random.Generator:
    """Deterministic generator keyed by an integer path."""
    return np.random.default_rng([int(p) & 0xFFFFFFFF for p in path])


@dataclass(frozen=True)
class PriorConfig:
    """Knobs of the synthetic task distribution."""

    d_max: int = 20
    c_max: int = 10
    n_total: int = 256
    feature_count_range: tuple[int, int] = (2, 6)
    class_count_range: tuple[int, int] = (2, 3)
    label_noise: float = 0.0
    kind_weights: tuple[float, float, float] = (0.4, 0.3, 0.3)

    def __post_init__(self):
        lo_f, hi_f = self.feature_count_range
        lo_c, hi_c = self.class_count_range
        if not (1 <= lo_f <= hi_f <= self.d_max):
            raise ConfigurationError(
                f"feature_count_range {self.feature_count_range} outside [1, {self.d_max}]"
            )
        if not (2 <= lo_c <= hi_c <= self.c_max):
            raise ConfigurationError(
                f"class_count_range {self.class_count_range} outside [2, {self.c_max}]"
            )
        if not (0.0 <= self.label_noise < 1.0):
            raise ConfigurationError(f"label_noise {self.label_noise} outside [0, 1)")
        if abs(sum(self.kind_weights) - 1.0) > 1e-9:
            raise ConfigurationError(
                f"kind_weights must sum to 1, got {sum(self.kind_weights)}"
            )

    def to_json(self) -> str:
        return json.dumps({
            "d_max": self.d_max,
            "c_max": self.c_max,
            "n_total": self.n_total,
            "feature_count_range": list(self.feature_count_range),
            "class_count_range": list(self.class_count_range),
            "label_noise": self.label_noise,
            "kind_weights": list(self.kind_weights),
        }, indent=2)

    @staticmethod
    def from_json(text: str) -> "PriorConfig":
        raw = json.loads(text)
        return PriorConfig(
            d_max=int(raw["d_max"]),
            c_max=int(raw["c_max"]),
            n_total=int(raw["n_total"]),
            feature_count_range=tuple(raw["feature_count_range"]),
            class_count_range=tuple(raw["class_count_range"]),
            label_noise=float(raw["label_noise"]),
            kind_weights=tuple(raw["kind_weights"]),
        )


@dataclass
class HypothesisSample:
    """One generative process: its kind plus all sampled parameters."""

    seed: int
    kind: str
    feature_count: int
    class_count: int
    parameters: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class SyntheticTask:
    """A standardized labeled dataset with a context/held-out split."""

    features: np.ndarray  # [n_total x d], z-scored per column
    labels: np.ndarray    # [n_total] ints in [0, class_count)
    class_count: int
    train_mask: np.ndarray  # bool per row; True = context

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.train_mask], self.labels[self.train_mask]

    @property
    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[~self.train_mask], self.labels[~self.train_mask]


def sample_hypothesis(cfg: PriorConfig, seed: int) -> HypothesisSample:
    """Draw a hypothesis kind and its parameters, deterministically in seed."""
    rng = _rng(seed, 0xA11CE)
    kind = KINDS[rng.choice(3, p=np.asarray(cfg.kind_weights))]
    d = int(rng.integers(cfg.feature_count_range[0], cfg.feature_count_range[1] + 1))
    c = int(rng.integers(cfg.class_count_range[0], cfg.class_count_range[1] + 1))
    params: dict[str, np.ndarray] = {}
    if kind == "random-mlp":
        hidden = 16
        params["w1"] = rng.standard_normal((d, hidden)) / np.sqrt(d)
        params["b1"] = rng.standard_normal(hidden) * 0.1
        params["w2"] = rng.standard_normal((hidden, hidden)) / np.sqrt(hidden)
        params["b2"] = rng.standard_normal(hidden) * 0.1
        params["w3"] = rng.standard_normal((hidden, c)) * np.sqrt(3.0 / hidden)
    elif kind == "gaussian-mixture":
        # several clusters may share a class; alternating assignment makes
        # label structure local rather than globally smooth
        per_class = int(rng.integers(1, 9))
        total = c * per_class
        params["means"] = rng.standard_normal((total, d)) * 2.4
        params["scales"] = rng.uniform(0.15, 0.5, size=total)
        params["cluster_class"] = np.arange(total) % c
    else:  # linear-threshold
        w = rng.standard_normal(d)
        params["w"] = w / np.linalg.norm(w)
        params["thresholds"] = np.sort(rng.standard_normal(c - 1))
    return HypothesisSample(seed=seed, kind=kind, feature_count=d,
                            class_count=c, parameters=params)


def _labels_for(h: HypothesisSample, x: np.ndarray) -> np.ndarray:
    p = h.parameters
    if h.kind == "random-mlp":
        a = np.tanh(x @ p["w1"] + p["b1"])
        a = np.tanh(a @ p["w2"] + p["b2"])
        return np.argmax(a @ p["w3"], axis=1)
    if h.kind == "linear-threshold":
        return np.searchsorted(p["thresholds"], x @ p["w"]).astype(np.int64)
    raise AssertionError(h.kind)


def sample_task(h: HypothesisSample, cfg: PriorConfig, seed: int) -> SyntheticTask:
    """Sample one dataset from a hypothesis and split it into context/held-out.

    Raises DegenerateTaskError when no split keeps every held-out class
    represented in the context after a bounded number of retries.
    """
    rng = _rng(h.seed, seed, 0x7A5C)
    n = cfg.n_total
    if h.kind == "gaussian-mixture":
        total = len(h.parameters["means"])
        comp = rng.integers(0, total, size=n)
        means = h.parameters["means"][comp]
        scales = h.parameters["scales"][comp][:, None]
        x = means + scales * rng.standard_normal((n, h.feature_count))
        y = h.parameters["cluster_class"][comp].astype(np.int64)
    else:
        x = rng.standard_normal((n, h.feature_count))
        y = _labels_for(h, x)

    if cfg.label_noise > 0.0 and h.class_count > 1:
        flip = rng.random(n) < cfg.label_noise
        offsets = rng.integers(1, h.class_count, size=n)
        y = np.where(flip, (y + offsets) % h.class_count, y)

    # z-score per column over the whole task; constant columns stay at zero
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    x = (x - mu) / np.where(sd > 0.0, sd, 1.0)

    for _ in range(_SPLIT_RETRIES):
        frac = rng.uniform(0.5, 0.9)
        mask = rng.random(n) < frac
        if mask.sum() == 0 or mask.sum() == n:
            continue
        train_classes = set(np.unique(y[mask]))
        test_classes = set(np.unique(y[~mask]))
        if test_classes <= train_classes:
            return SyntheticTask(features=x, labels=y,
                                 class_count=h.class_count, train_mask=mask)
    raise DegenerateTaskError(
        f"no class-covering split after {_SPLIT_RETRIES} retries "
        f"(kind={h.kind}, classes={h.class_count}, seed={seed})"
    )


def task_stream(cfg: PriorConfig, seed: int) -> Iterator[SyntheticTask]:
    """Infinite deterministic stream; element i depends only on (cfg, seed, i).

    Hypotheses whose tasks repeatedly fail class coverage are resampled
    (bounded), so consumers always see valid tasks.
    """
    i = 0
    while True:
        task = None
        for retry in range(_HYPOTHESIS_RETRIES):
            h = sample_hypothesis(cfg, _derive(seed, i, retry))
            try:
                task = sample_task(h, cfg, _derive(seed, i, retry) + 1)
                break
            except DegenerateTaskError:
                continue
        if task is None:  # pragma: no cover - requires a pathological config
            raise DegenerateTaskError(
                f"stream element {i}: no valid hypothesis after "
                f"{_HYPOTHESIS_RETRIES} resamples"
            )
        yield task
        i += 1


def _derive(seed: int, index: int, salt: int) -> int:
    """Stable scalar seed for (stream seed, element, retry)."""
    return (int(seed) * 1_000_003 + index * 97 + salt * 2) & 0x7FFFFFFF
