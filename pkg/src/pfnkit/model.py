"""The set-transformer classifier and its training/inference entry points.

Rows of a tabular task become tokens: a context token is the sum of a
linear feature embedding and a label embedding; a query token uses a
reserved "unlabeled" entry of the label table instead. Masked
self-attention lets context tokens see the whole context block and lets
each query see the context plus itself only, so queries never influence
one another and the context acts as a set (no positional encodings).

Pretraining minimizes the cross-entropy of held-out rows of synthetic
tasks, which drives the network toward posterior-predictive behaviour for
the task distribution it was trained on.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import (
    CapacityError,
    ClassBudgetError,
    ConfigurationError,
    DimensionError,
    FeatureBudgetError,
    NumericError,
    SerializationError,
)
from .prior import SyntheticTask

CHECKPOINT_VERSION = 1
MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"
DEFAULT_CONTEXT_BUDGET = 3000  # mirrors the 3000-point zero-shot baseline


@dataclass(frozen=True)
class PfnConfig:
    e: int = 96          # embedding width
    layers: int = 3
    heads: int = 4
    ff_mult: int = 2
    d_max: int = 20      # feature budget
    c_max: int = 10      # decoder class budget
    n_ctx_max: int = 3072

    def __post_init__(self):
        for name in ("e", "layers", "heads", "ff_mult", "d_max", "c_max", "n_ctx_max"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.e % self.heads != 0:
            raise ConfigurationError(
                f"embedding width {self.e} not divisible by {self.heads} heads"
            )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("e", "layers", "heads", "ff_mult", "d_max", "c_max", "n_ctx_max")}

    @staticmethod
    def from_dict(raw: dict) -> "PfnConfig":
        return PfnConfig(**{k: int(v) for k, v in raw.items()})


class PfnModel:
    """Encoders, transformer blocks and decoder, all as named parameters.

    ``label_capacity`` is the number of distinct class labels the label
    table can embed (the table holds one extra row used as the query
    marker); ``decoder_width`` is the number of classes the decoder emits.
    Both equal ``c_max`` until the decoder is retrained for more classes.
    A model is exclusively owned while training; once trained it is only
    read, so concurrent forward passes on it are safe.
    """

    def __init__(self, config: PfnConfig, seed: int = 0):
        self.config = config
        self.creation_seed = int(seed)
        self.label_capacity = config.c_max
        self.decoder_width = config.c_max
        self.trainable_decoder = False
        self.params: dict[str, T.Tensor] = {}
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x90DE])
        e, h = config.e, config.ff_mult * config.e

        def linear(name: str, n_in: int, n_out: int, std: float | None = None):
            s = (1.0 / np.sqrt(n_in)) if std is None else std
            self._add(f"{name}.weight", rng.standard_normal((n_in, n_out)) * s)
            self._add(f"{name}.bias", np.zeros(n_out))

        linear("x_encoder", config.d_max, e)
        self._add("y_encoder.table", rng.standard_normal((config.c_max + 1, e)))
        for i in range(config.layers):
            self._add(f"block{i}.ln1.gain", np.ones(e))
            self._add(f"block{i}.ln1.bias", np.zeros(e))
            for proj in ("wq", "wk", "wv", "wo"):
                linear(f"block{i}.attn.{proj}", e, e)
            self._add(f"block{i}.ln2.gain", np.ones(e))
            self._add(f"block{i}.ln2.bias", np.zeros(e))
            linear(f"block{i}.ff.w1", e, h)
            linear(f"block{i}.ff.w2", h, e)
        self._add("final_ln.gain", np.ones(e))
        self._add("final_ln.bias", np.zeros(e))
        linear("decoder.w1", e, h)
        # near-zero head so a fresh model predicts close to uniform
        linear("decoder.w2", h, config.c_max, std=0.02)

    def _add(self, name: str, values: np.ndarray) -> None:
        self.params[name] = T.Tensor(values, requires_grad=True)

    # -- bookkeeping -----------------------------------------------------------

    @property
    def query_index(self) -> int:
        return self.label_capacity

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def decoder_parameter_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("decoder.")]

    def trainable_parameters(self) -> list[T.Tensor]:
        if self.trainable_decoder:
            return [self.params[n] for n in self.decoder_parameter_names()]
        return list(self.params.values())

    def snapshot_values(self, names: Sequence[str] | None = None) -> dict[str, np.ndarray]:
        names = list(self.params) if names is None else list(names)
        return {n: self.params[n].values.copy() for n in names}

    def restore_values(self, snap: dict[str, np.ndarray]) -> None:
        for n, vals in snap.items():
            self.params[n].values[...] = vals


# -- token assembly -------------------------------------------------------------


def _pad_features(x, d_max: int) -> T.Tensor:
    """Lift features to a [rows x d_max] tensor, zero-padding missing columns.

    Accepts a plain array or a Tensor (so gradients can flow to the inputs,
    e.g. in gradient checks and prompt training).
    """
    t = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x, dtype=np.float64))
    if t.values.ndim != 2:
        raise DimensionError(f"features must be [rows x d], got shape {t.shape}")
    rows, d = t.shape
    if d > d_max:
        raise FeatureBudgetError(
            f"{d} features exceed the model budget of {d_max}; "
            "apply feature selection first"
        )
    if d == d_max:
        return t
    if rows == 0:
        return T.Tensor(np.zeros((0, d_max)))
    return T.concat_cols([t, T.Tensor(np.zeros((rows, d_max - d)))])


def _row_count(x) -> int:
    return x.shape[0] if isinstance(x, T.Tensor) else len(np.asarray(x))


def encode_batch(model: PfnModel, train_x, train_y, test_x) -> T.Tensor:
    """Embed context rows (features + label) and query rows (features + marker)."""
    train_y = np.asarray(train_y, dtype=np.int64)
    d_max = model.config.d_max
    xt = _pad_features(train_x, d_max) if train_y.size else T.Tensor(np.zeros((0, d_max)))
    xq = _pad_features(test_x, d_max)
    if xt.shape[0] != train_y.size:
        raise DimensionError(
            f"{xt.shape[0]} context rows but {train_y.size} labels"
        )
    if train_y.size and train_y.max() >= model.label_capacity:
        raise ClassBudgetError(
            f"label {train_y.max()} exceeds capacity {model.label_capacity}; "
            "retrain the decoder for more classes"
        )
    if train_y.size and train_y.min() < 0:
        raise ClassBudgetError(f"negative label {train_y.min()}")
    stacked = T.concat_rows([xt, xq])
    proj = T.add_bias(T.matmul(stacked, model.params["x_encoder.weight"]),
                      model.params["x_encoder.bias"])
    y_idx = np.concatenate([train_y,
                            np.full(xq.shape[0], model.query_index, dtype=np.int64)])
    emb = T.gather_rows(model.params["y_encoder.table"], y_idx)
    return T.add(proj, emb)


def attention_mask(p: int, n_train: int, n_test: int) -> np.ndarray:
    """Boolean [S x S] visibility: context block sees itself; each query sees
    the context block plus itself only."""
    s = p + n_train + n_test
    ctx = p + n_train
    mask = np.zeros((s, s), dtype=bool)
    mask[:ctx, :ctx] = True
    mask[ctx:, :ctx] = True
    diag = np.arange(ctx, s)
    mask[diag, diag] = True
    return mask


def _block(model: PfnModel, i: int, x: T.Tensor, mask: np.ndarray) -> T.Tensor:
    cfg = model.config
    p = model.params

    z = T.layer_norm(x, p[f"block{i}.ln1.gain"], p[f"block{i}.ln1.bias"])
    q = T.add_bias(T.matmul(z, p[f"block{i}.attn.wq.weight"]), p[f"block{i}.attn.wq.bias"])
    k = T.add_bias(T.matmul(z, p[f"block{i}.attn.wk.weight"]), p[f"block{i}.attn.wk.bias"])
    v = T.add_bias(T.matmul(z, p[f"block{i}.attn.wv.weight"]), p[f"block{i}.attn.wv.bias"])
    attn = T.multi_head_attention(q, k, v, mask, cfg.heads)
    mixed = T.add_bias(T.matmul(attn, p[f"block{i}.attn.wo.weight"]),
                       p[f"block{i}.attn.wo.bias"])
    x = T.add(x, mixed)

    z = T.layer_norm(x, p[f"block{i}.ln2.gain"], p[f"block{i}.ln2.bias"])
    hdn = T.gelu(T.add_bias(T.matmul(z, p[f"block{i}.ff.w1.weight"]),
                            p[f"block{i}.ff.w1.bias"]))
    out = T.add_bias(T.matmul(hdn, p[f"block{i}.ff.w2.weight"]),
                     p[f"block{i}.ff.w2.bias"])
    return T.add(x, out)


def forward_logits(model: PfnModel, train_x, train_y, test_x,
                   prompt=None) -> T.Tensor:
    """Decoder logits for the query rows; differentiable end to end."""
    n = len(np.asarray(train_y)) if train_y is not None else 0
    m = _row_count(test_x)
    p_len = prompt.p if prompt is not None else 0
    total = n + m + p_len
    if total > model.config.n_ctx_max:
        raise CapacityError(
            f"sequence of {total} tokens exceeds n_ctx_max={model.config.n_ctx_max}"
        )

    real = encode_batch(model, train_x if n else np.zeros((0, 1)),
                        train_y if n else np.zeros(0, dtype=np.int64), test_x)
    if p_len:
        if prompt.y_part.size and prompt.y_part.max() >= model.label_capacity:
            raise ClassBudgetError(
                f"prompt label {prompt.y_part.max()} exceeds capacity "
                f"{model.label_capacity}"
            )
        y_emb = T.gather_rows(model.params["y_encoder.table"], prompt.y_part)
        tokens = T.concat_rows([T.add(prompt.x_part, y_emb), real])
    else:
        tokens = real

    mask = attention_mask(p_len, n, m)
    x = tokens
    for i in range(model.config.layers):
        x = _block(model, i, x, mask)
    x = T.layer_norm(x, model.params["final_ln.gain"], model.params["final_ln.bias"])
    queries = T.slice_rows(x, p_len + n, total)
    hdn = T.gelu(T.add_bias(T.matmul(queries, model.params["decoder.w1.weight"]),
                            model.params["decoder.w1.bias"]))
    return T.add_bias(T.matmul(hdn, model.params["decoder.w2.weight"]),
                      model.params["decoder.w2.bias"])


def forward(model: PfnModel, train_x, train_y, test_x, prompt=None) -> T.Tensor:
    """Class probabilities [m x decoder_width]; rows sum to 1."""
    logits = forward_logits(model, train_x, train_y, test_x, prompt)
    if logits.shape[0] == 0:
        return T.Tensor(np.zeros((0, model.decoder_width)))
    return T.softmax(logits, axis=-1)


def class_slice(probabilities: np.ndarray, k: int) -> np.ndarray:
    """Keep the first k classes and renormalize each row."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    width = probabilities.shape[-1]
    if not (2 <= k <= width):
        raise DimensionError(f"class count {k} outside [2, {width}]")
    if k == width:
        return probabilities.copy()
    sliced = probabilities[:, :k]
    totals = np.maximum(sliced.sum(axis=-1, keepdims=True), 1e-12)
    return sliced / totals


# -- training ---------------------------------------------------------------------


@dataclass
class PretrainTrace:
    losses: list[float] = field(default_factory=list)
    steps: int = 0
    seed: int = 0


def pretrain(model: PfnModel, stream: Iterator[SyntheticTask], steps: int,
             lr: float = 1e-4, seed: int = 0) -> tuple[PfnModel, PretrainTrace]:
    """Fit the model on a stream of synthetic tasks.

    One optimizer step per task: cross-entropy of the held-out block given
    the context block, AdamW with zero weight decay and a 10% linear
    warmup. Aborts with the step index if the loss goes non-finite.
    """
    if steps < 1:
        raise ConfigurationError(f"steps must be >= 1, got {steps}")
    opt = T.AdamW(model.trainable_parameters(), lr=lr, weight_decay=0.0)
    warmup = max(1, int(round(0.1 * steps)))
    trace = PretrainTrace(seed=seed)
    for step in range(steps):
        task = next(stream)
        train_x, train_y = task.train
        test_x, test_y = task.test
        logits = forward_logits(model, train_x, train_y, test_x)
        loss = T.cross_entropy(logits, test_y)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite pretraining loss at step {step}")
        trace.losses.append(value)
        opt.zero_grad()
        loss.backward()
        rate = lr * min(1.0, (step + 1) / warmup)
        opt.step(lr=rate)
    trace.steps = steps
    return model, trace


# -- inference --------------------------------------------------------------------


def predict_zero_shot(model: PfnModel, dataset, context_budget: int = DEFAULT_CONTEXT_BUDGET,
                      rows: str | np.ndarray = "test",
                      seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Labels and probabilities for dataset rows given its training split.

    Training sets larger than the context budget are reduced with a seeded
    random, label-proportional sketch. Returns (labels, probabilities with
    the dataset's classes renormalized); ties in the argmax go to the
    lowest class index.
    """
    from .context import SketchConfig, sketch  # local import to avoid a cycle

    if dataset.features.shape[1] > model.config.d_max:
        raise FeatureBudgetError(
            f"{dataset.features.shape[1]} features exceed budget "
            f"{model.config.d_max}; run feature selection first"
        )
    if dataset.class_count > model.label_capacity:
        raise ClassBudgetError(
            f"{dataset.class_count} classes exceed capacity "
            f"{model.label_capacity}; retrain the decoder first"
        )
    eval_idx = dataset.split_rows(rows) if isinstance(rows, str) else np.asarray(rows)
    train_idx = dataset.split.train
    if len(train_idx) > context_budget:
        result = sketch(dataset, SketchConfig(method="random", n=context_budget,
                                              label_mode="proportional", seed=seed),
                        rows=train_idx)
        train_idx = result.indices
    ctx_x = dataset.features[train_idx]
    ctx_y = dataset.labels[train_idx]
    probs = _batched_forward(model, ctx_x, ctx_y, dataset.features[eval_idx])
    k = dataset.class_count
    if probs.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, k))
    sliced = class_slice(probs, k) if k >= 2 else probs[:, :k]
    return np.argmax(sliced, axis=1), sliced


def _batched_forward(model: PfnModel, ctx_x, ctx_y, query_x,
                     prompt=None, batch: int = 256) -> np.ndarray:
    """Run queries through the model in chunks; output is concatenated probs."""
    m = len(query_x)
    if m == 0:
        return np.zeros((0, model.decoder_width))
    fixed = len(ctx_y) + (prompt.p if prompt is not None else 0)
    room = model.config.n_ctx_max - fixed
    if room < 1:
        raise CapacityError(
            f"context of {fixed} tokens leaves no room for queries "
            f"(n_ctx_max={model.config.n_ctx_max})"
        )
    batch = min(batch, room)
    outputs = []
    for lo in range(0, m, batch):
        chunk = query_x[lo:lo + batch]
        outputs.append(forward(model, ctx_x, ctx_y, chunk, prompt).values)
    return np.vstack(outputs)


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(model: PfnModel, path: str) -> None:
    """Write a manifest plus all parameter blobs under ``path`` (a directory)."""
    os.makedirs(path, exist_ok=True)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "creation_seed": model.creation_seed,
        "label_capacity": model.label_capacity,
        "decoder_width": model.decoder_width,
        "parameters": [{"name": n, "shape": list(p.shape)}
                       for n, p in model.params.items()],
    }
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    with open(os.path.join(path, PARAMS_NAME), "wb") as fh:
        for name in model.params:
            T.write_tensor(model.params[name], fh)


def load_checkpoint(path: str) -> PfnModel:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise SerializationError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise SerializationError(
            f"unsupported checkpoint version {manifest.get('format_version')}"
        )
    config = PfnConfig.from_dict(manifest["config"])
    model = PfnModel(config, seed=manifest.get("creation_seed", 0))
    model.label_capacity = int(manifest.get("label_capacity", config.c_max))
    model.decoder_width = int(manifest.get("decoder_width", config.c_max))
    model.params = {}
    with open(os.path.join(path, PARAMS_NAME), "rb") as fh:
        for entry in manifest["parameters"]:
            t = T.read_tensor(fh)
            if list(t.shape) != entry["shape"]:
                raise SerializationError(
                    f"parameter {entry['name']}: expected shape {entry['shape']}, "
                    f"found {list(t.shape)}"
                )
            t.requires_grad = True
            model.params[entry["name"]] = t
    return model


def clone_model(model: PfnModel) -> PfnModel:
    """Deep copy (fresh parameter tensors, same config and metadata)."""
    twin = PfnModel.__new__(PfnModel)
    twin.config = model.config
    twin.creation_seed = model.creation_seed
    twin.label_capacity = model.label_capacity
    twin.decoder_width = model.decoder_width
    twin.trainable_decoder = model.trainable_decoder
    twin.params = {n: T.Tensor(p.values.copy(), requires_grad=True)
                   for n, p in model.params.items()}
    return twin
