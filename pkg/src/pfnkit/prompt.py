"""Learned-context tuning against a frozen backbone.

A tuned prompt is a small matrix of trainable row embeddings with a fixed
label column; prepended to the context it stands in for (or augments) real
training rows. Training touches only the prompt (plus the decoder when the
class head has been retrained), so the backbone stays bit-identical.

Two training regimes exist: with real rows mixed into the context each
step (a uniformly random quantity up to a cap) or with the prompt as the
only context. Inference likewise runs with real context ("C"), without
("NC"), or picks the better of the two on validation. Ensembles fit
several prompts under per-member feature/label permutations and average
the best members' probabilities.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import TabularDataset
from .errors import (
    ClassBudgetError,
    ConfigurationError,
    NumericError,
    PromptTooShortError,
)
from .model import (
    DEFAULT_CONTEXT_BUDGET,
    PfnModel,
    _batched_forward,
    class_slice,
    clone_model,
    forward,
    forward_logits,
)

TRAIN_MODES = ("ct", "nct")
EVAL_MODES = ("c", "nc", "both")
LOSSES = ("cross-entropy", "kl-to-zero-shot")
LABEL_INITS = ("equal", "proportional")
KL_CONTEXT_POINTS = 512  # real rows behind the frozen reference distribution


def _rng(*path: int) -> np.random.Generator:
    return np.random.default_rng([int(p) & 0xFFFFFFFF for p in path])


@dataclass(frozen=True)
class TuneConfig:
    p: int = 10
    train_mode: str = "nct"
    eval_mode: str = "both"
    loss: str = "cross-entropy"
    label_init: str = "equal"
    lr: float = 3e-2
    epochs: int = 30
    patience: int = 2
    warmup_steps: int = 10
    val_every: int = 2
    max_val_size: int = 2000
    ctx_upper_bound: int = 1152
    nct_batch_points: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.p < 1:
            raise ConfigurationError(f"prompt length must be >= 1, got {self.p}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.train_mode not in TRAIN_MODES:
            raise ConfigurationError(f"train_mode must be one of {TRAIN_MODES}")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigurationError(f"eval_mode must be one of {EVAL_MODES}")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"loss must be one of {LOSSES}")
        if self.label_init not in LABEL_INITS:
            raise ConfigurationError(f"label_init must be one of {LABEL_INITS}")
        if self.epochs < 1 or self.val_every < 1 or self.nct_batch_points < 1:
            raise ConfigurationError("epochs, val_every and nct_batch_points must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "p", "train_mode", "eval_mode", "loss", "label_init", "lr", "epochs",
            "patience", "warmup_steps", "val_every", "max_val_size",
            "ctx_upper_bound", "nct_batch_points", "seed")}

    @staticmethod
    def from_dict(raw: dict) -> "TuneConfig":
        return TuneConfig(**raw)


@dataclass(frozen=True)
class EnsembleSpec:
    members: int = 10
    top_k: int = 2
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.top_k <= self.members):
            raise ConfigurationError(
                f"need 1 <= top_k <= members, got top_k={self.top_k}, "
                f"members={self.members}"
            )


class TunedPrompt:
    """Trainable context rows with a fixed label column."""

    def __init__(self, x_part: T.Tensor, y_part: np.ndarray, class_count: int):
        self.x_part = x_part
        self.y_part = np.asarray(y_part, dtype=np.int64)
        self.class_count = int(class_count)
        self.validation_score: float | None = None
        if self.y_part.size and (self.y_part.min() < 0
                                 or self.y_part.max() >= class_count):
            raise ConfigurationError(
                f"prompt labels must lie in [0, {class_count})"
            )
        if x_part.shape[0] != len(self.y_part):
            raise ConfigurationError(
                f"{x_part.shape[0]} prompt rows but {len(self.y_part)} labels"
            )

    @property
    def p(self) -> int:
        return len(self.y_part)

    def clone(self) -> "TunedPrompt":
        twin = TunedPrompt(T.Tensor(self.x_part.values.copy(), requires_grad=True),
                           self.y_part.copy(), self.class_count)
        twin.validation_score = self.validation_score
        return twin


def init_prompt(cfg: TuneConfig, dataset: TabularDataset, model: PfnModel) -> TunedPrompt:
    """Fresh prompt: small Gaussian embeddings plus a seeded label column.

    Equal init places labels round-robin so per-class counts differ by at
    most one; proportional init draws them from the empirical training
    class frequencies.
    """
    k = dataset.class_count
    if k > model.decoder_width:
        raise ClassBudgetError(
            f"{k} classes exceed the decoder width {model.decoder_width}; "
            "extend the classes first"
        )
    rng = _rng(cfg.seed, 0x9807)
    if cfg.label_init == "equal":
        if cfg.p < k:
            raise PromptTooShortError(
                f"prompt of length {cfg.p} cannot place all {k} classes"
            )
        y_part = np.arange(cfg.p, dtype=np.int64) % k
    else:
        train_y = dataset.labels[dataset.split.train]
        freqs = np.bincount(train_y, minlength=k).astype(np.float64)
        freqs /= freqs.sum()
        y_part = rng.choice(k, size=cfg.p, p=freqs).astype(np.int64)
    x_part = T.Tensor(0.02 * rng.standard_normal((cfg.p, model.config.e)),
                      requires_grad=True)
    return TunedPrompt(x_part, y_part, k)


@dataclass
class FitTrace:
    losses: list[float] = field(default_factory=list)
    validations: list[tuple[int, float]] = field(default_factory=list)  # (epoch, acc)
    best_epoch: int = -1
    best_accuracy: float = -1.0
    steps: int = 0
    trainable_parameters: int = 0
    skipped_penalty_batches: int = 0


def _epoch_batches(train_idx: np.ndarray, batch_points: int,
                   rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled target batches of a fixed size (a single short batch when the
    dataset is smaller than one batch)."""
    order = rng.permutation(train_idx)
    if len(order) <= batch_points:
        return [order]
    n_full = len(order) // batch_points
    return [order[i * batch_points:(i + 1) * batch_points] for i in range(n_full)]


def _ct_context(train_idx: np.ndarray, targets: np.ndarray, upper: int,
                rng: np.random.Generator) -> np.ndarray:
    """Uniformly sized random real context, disjoint from the target rows."""
    pool = np.setdiff1d(train_idx, targets, assume_unique=False)
    cap = min(upper, len(pool))
    size = int(rng.integers(0, cap + 1))
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    return rng.choice(pool, size=size, replace=False)


def _capped_budget(model: PfnModel, p: int, budget: int,
                   query_room: int = 256) -> int:
    """Clamp a real-context budget so prompt + context + a query chunk fit."""
    return max(0, min(budget, model.config.n_ctx_max - p - query_room))


def _val_predictions(model: PfnModel, prompt: TunedPrompt, dataset: TabularDataset,
                     val_idx: np.ndarray, mode: str, seed: int,
                     context_budget: int) -> np.ndarray:
    if mode == "nc":
        probs = _batched_forward(model, np.zeros((0, dataset.n_features)),
                                 np.zeros(0, dtype=np.int64),
                                 dataset.features[val_idx], prompt=prompt)
    else:
        budget = _capped_budget(model, prompt.p, context_budget)
        ctx = _context_rows(dataset, budget, seed)
        probs = _batched_forward(model, dataset.features[ctx], dataset.labels[ctx],
                                 dataset.features[val_idx], prompt=prompt)
    k = prompt.class_count
    return np.argmax(class_slice(probs, k) if k >= 2 else probs[:, :k], axis=1)


def _val_accuracy(model: PfnModel, prompt: TunedPrompt, dataset: TabularDataset,
                  val_idx: np.ndarray, mode: str, seed: int,
                  context_budget: int) -> float:
    pred = _val_predictions(model, prompt, dataset, val_idx, mode, seed,
                            context_budget)
    return float((pred == dataset.labels[val_idx]).mean())


def _context_rows(dataset: TabularDataset, budget: int, seed: int) -> np.ndarray:
    from .context import SketchConfig, sketch

    train_idx = dataset.split.train
    if budget <= 0:
        return np.zeros(0, dtype=np.int64)
    if len(train_idx) <= budget:
        return train_idx
    return sketch(dataset, SketchConfig(method="random", n=budget,
                                        label_mode="proportional", seed=seed),
                  rows=train_idx).indices


def tune(model: PfnModel, prompt: TunedPrompt, dataset: TabularDataset,
         cfg: TuneConfig, fairness_spec=None) -> tuple[TunedPrompt, FitTrace]:
    """Fit the prompt (and the decoder, when it is marked trainable).

    One optimizer step per target batch, batches of a fixed number of rows,
    no gradient aggregation. Validation runs every ``val_every`` epochs on
    a capped, seeded subset; the best-validation snapshot is restored at
    the end, and training stops early after ``patience`` validations
    without improvement.
    """
    val_idx = dataset.split.val
    if len(val_idx) == 0:
        raise ConfigurationError("tuning requires a non-empty validation split")
    train_idx = dataset.split.train
    if len(train_idx) == 0:
        raise ConfigurationError("tuning requires a non-empty training split")

    rng = _rng(cfg.seed, 0x70E)
    if len(val_idx) > cfg.max_val_size:
        val_idx = np.sort(rng.choice(val_idx, size=cfg.max_val_size, replace=False))

    trainable = [prompt.x_part]
    decoder_names = model.decoder_parameter_names() if model.trainable_decoder else []
    trainable += [model.params[n] for n in decoder_names]
    opt = T.AdamW(trainable, lr=cfg.lr, weight_decay=0.0)
    trace = FitTrace(trainable_parameters=sum(t.size for t in trainable))

    kl_ctx = None
    if cfg.loss == "kl-to-zero-shot":
        kl_ctx = _context_rows(dataset, min(KL_CONTEXT_POINTS, len(train_idx)),
                               cfg.seed)

    from .fairness import dp_regularized_loss, group_membership
    groups_all = group_membership(dataset, fairness_spec) if fairness_spec else None

    eval_mode = "nc" if cfg.train_mode == "nct" else "c"
    ct_upper = _capped_budget(model, prompt.p, cfg.ctx_upper_bound,
                              query_room=cfg.nct_batch_points)
    best_snapshot = None
    stale = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for targets in _epoch_batches(train_idx, cfg.nct_batch_points, rng):
            if cfg.train_mode == "ct":
                ctx_idx = _ct_context(train_idx, targets, ct_upper, rng)
            else:
                ctx_idx = np.zeros(0, dtype=np.int64)
            logits = forward_logits(model, dataset.features[ctx_idx],
                                    dataset.labels[ctx_idx],
                                    dataset.features[targets], prompt=prompt)
            if cfg.loss == "cross-entropy":
                loss = T.cross_entropy(logits, dataset.labels[targets])
            else:
                reference = forward(model, dataset.features[kl_ctx],
                                    dataset.labels[kl_ctx],
                                    dataset.features[targets]).detach()
                loss = T.kl_divergence(reference, T.softmax(logits, axis=-1))
            if fairness_spec is not None and fairness_spec.lam > 0.0:
                batch_groups = groups_all[targets]
                if batch_groups.any() and (~batch_groups).any():
                    probs = T.softmax(logits, axis=-1)
                    loss = dp_regularized_loss(loss, probs, batch_groups,
                                               fairness_spec)
                else:
                    trace.skipped_penalty_batches += 1
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite tuning loss at step {step}")
            trace.losses.append(value)
            opt.zero_grad()
            loss.backward()
            step += 1
            rate = cfg.lr * min(1.0, step / max(1, cfg.warmup_steps))
            opt.step(lr=rate)
        if epoch % cfg.val_every == 0 or epoch == cfg.epochs:
            pred = _val_predictions(model, prompt, dataset, val_idx, eval_mode,
                                    cfg.seed, cfg.ctx_upper_bound)
            acc = float((pred == dataset.labels[val_idx]).mean())
            score = acc
            if fairness_spec is not None and fairness_spec.lam > 0.0:
                # multi-objective run: the snapshot criterion mirrors the
                # training objective (accuracy traded against the parity gap)
                vg = groups_all[val_idx]
                if vg.any() and (~vg).any():
                    from .fairness import demographic_parity
                    score = acc - fairness_spec.lam * demographic_parity(
                        pred, vg, fairness_spec.positive_class)
            trace.validations.append((epoch, score))
            if score > trace.best_accuracy:
                trace.best_accuracy = score
                trace.best_epoch = epoch
                best_snapshot = (prompt.x_part.values.copy(),
                                 {n: model.params[n].values.copy()
                                  for n in decoder_names})
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    trace.steps = step
    if best_snapshot is not None:
        prompt.x_part.values[...] = best_snapshot[0]
        for n, vals in best_snapshot[1].items():
            model.params[n].values[...] = vals
    prompt.validation_score = trace.best_accuracy
    return prompt, trace


def predict(model: PfnModel, prompt: TunedPrompt, dataset: TabularDataset,
            eval_mode: str = "nc", context_budget: int = DEFAULT_CONTEXT_BUDGET,
            rows: str | np.ndarray = "test",
            seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Predict with the tuned prompt, with or without real context rows.

    ``both`` evaluates the two modes on the validation split and uses the
    winner (ties resolved toward the cheaper no-context mode).
    """
    if eval_mode not in EVAL_MODES:
        raise ConfigurationError(f"eval_mode must be one of {EVAL_MODES}")
    if eval_mode == "both":
        val_idx = dataset.split.val
        if len(val_idx) == 0:
            raise ConfigurationError("both-report-best needs a validation split")
        nc_acc = _val_accuracy(model, prompt, dataset, val_idx, "nc", seed,
                               context_budget)
        c_acc = _val_accuracy(model, prompt, dataset, val_idx, "c", seed,
                              context_budget)
        eval_mode = "c" if c_acc > nc_acc else "nc"
    eval_idx = dataset.split_rows(rows) if isinstance(rows, str) else np.asarray(rows)
    if eval_mode == "nc":
        ctx = np.zeros(0, dtype=np.int64)
    else:
        ctx = _context_rows(dataset, _capped_budget(model, prompt.p, context_budget),
                            seed)
    probs = _batched_forward(model, dataset.features[ctx], dataset.labels[ctx],
                             dataset.features[eval_idx], prompt=prompt)
    k = prompt.class_count
    if probs.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, k))
    sliced = class_slice(probs, k) if k >= 2 else probs[:, :k]
    return np.argmax(sliced, axis=1), sliced


def extend_classes(model: PfnModel, new_k: int, seed: int = 0) -> PfnModel:
    """Copy the model with a fresh, wider decoder; only it (plus any prompt)
    will train afterwards. Label embeddings for the new classes are added as
    frozen random rows so prompts can reference them."""
    if new_k <= model.decoder_width:
        raise ConfigurationError(
            f"decoder already emits {model.decoder_width} classes; "
            f"use class_slice for {new_k}"
        )
    twin = clone_model(model)
    rng = _rng(seed, 0xDEC0)
    e, h = model.config.e, model.config.ff_mult * model.config.e
    twin.params["decoder.w1.weight"] = T.Tensor(
        rng.standard_normal((e, h)) / np.sqrt(e), requires_grad=True)
    twin.params["decoder.w1.bias"] = T.Tensor(np.zeros(h), requires_grad=True)
    twin.params["decoder.w2.weight"] = T.Tensor(
        rng.standard_normal((h, new_k)) * 0.02, requires_grad=True)
    twin.params["decoder.w2.bias"] = T.Tensor(np.zeros(new_k), requires_grad=True)

    old_table = twin.params["y_encoder.table"].values
    scale = old_table[:model.label_capacity].std() if model.label_capacity else 1.0
    extra = rng.standard_normal((new_k - model.label_capacity,
                                 model.config.e)) * scale
    table = np.vstack([old_table[:model.label_capacity], extra,
                       old_table[model.label_capacity:]])  # query row stays last
    twin.params["y_encoder.table"] = T.Tensor(table, requires_grad=True)
    twin.decoder_width = new_k
    twin.label_capacity = new_k
    twin.trainable_decoder = True
    return twin


def fine_tune_all(model: PfnModel, dataset: TabularDataset,
                  cfg: TuneConfig) -> tuple[PfnModel, FitTrace]:
    """Baseline: continue training every parameter on real data.

    Batches mirror the with-context tuning regime; the learning rate is
    pinned to 1e-3 regardless of the config.
    """
    val_idx = dataset.split.val
    if len(val_idx) == 0:
        raise ConfigurationError("fine-tuning requires a non-empty validation split")
    train_idx = dataset.split.train
    rng = _rng(cfg.seed, 0xF17E)
    if len(val_idx) > cfg.max_val_size:
        val_idx = np.sort(rng.choice(val_idx, size=cfg.max_val_size, replace=False))

    lr = 1e-3
    params = list(model.params.values())
    opt = T.AdamW(params, lr=lr, weight_decay=0.0)
    trace = FitTrace(trainable_parameters=sum(p.size for p in params))

    ct_upper = _capped_budget(model, 0, cfg.ctx_upper_bound,
                              query_room=cfg.nct_batch_points)
    best_snapshot = None
    stale = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for targets in _epoch_batches(train_idx, cfg.nct_batch_points, rng):
            ctx_idx = _ct_context(train_idx, targets, ct_upper, rng)
            logits = forward_logits(model, dataset.features[ctx_idx],
                                    dataset.labels[ctx_idx],
                                    dataset.features[targets])
            loss = T.cross_entropy(logits, dataset.labels[targets])
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite fine-tuning loss at step {step}")
            trace.losses.append(value)
            opt.zero_grad()
            loss.backward()
            step += 1
            rate = lr * min(1.0, step / max(1, cfg.warmup_steps))
            opt.step(lr=rate)
        if epoch % cfg.val_every == 0 or epoch == cfg.epochs:
            ctx = _context_rows(dataset, cfg.ctx_upper_bound, cfg.seed)
            probs = _batched_forward(model, dataset.features[ctx],
                                     dataset.labels[ctx],
                                     dataset.features[val_idx])
            k = dataset.class_count
            pred = np.argmax(class_slice(probs, k), axis=1)
            acc = float((pred == dataset.labels[val_idx]).mean())
            trace.validations.append((epoch, acc))
            if acc > trace.best_accuracy:
                trace.best_accuracy = acc
                trace.best_epoch = epoch
                best_snapshot = model.snapshot_values()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    trace.steps = step
    if best_snapshot is not None:
        model.restore_values(best_snapshot)
    return model, trace


# -- ensembling -----------------------------------------------------------------------


@dataclass
class EnsembleMember:
    prompt: TunedPrompt
    feature_perm: np.ndarray
    label_perm: np.ndarray      # new_label = label_perm[old_label]
    validation_score: float
    index: int


@dataclass
class Ensemble:
    members: list[EnsembleMember]
    ranking: list[int]          # member indices, best validation first
    top_k: int
    class_count: int


def member_seed(spec_seed: int, index: int) -> int:
    """Per-member tuning seed (member 0 reproduces a plain single tune)."""
    return (int(spec_seed) * 9176 + 31 * index) & 0x7FFFFFFF


def _permuted_view(dataset: TabularDataset, feature_perm: np.ndarray,
                   label_perm: np.ndarray) -> TabularDataset:
    features = dataset.features[:, feature_perm]
    labels = label_perm[dataset.labels]
    columns = [dataset.columns[j] for j in feature_perm]
    return TabularDataset(name=dataset.name, features=features, labels=labels,
                          class_count=dataset.class_count, columns=columns,
                          split=dataset.split, label_names=dataset.label_names)


def fit_ensemble(model: PfnModel, dataset: TabularDataset, cfg: TuneConfig,
                 spec: EnsembleSpec) -> tuple[Ensemble, list[FitTrace]]:
    """Fit one prompt per member under per-member permutations.

    Member 0 keeps the identity permutations, so a one-member ensemble is
    exactly a single tuning run. Members are ranked by validation accuracy
    (no-context accuracy when trained without context, with-context
    otherwise); rank ties break toward the lower member index.
    """
    k = dataset.class_count
    d = dataset.n_features
    members: list[EnsembleMember] = []
    traces: list[FitTrace] = []
    for i in range(spec.members):
        seed_i = member_seed(spec.seed, i)
        if i == 0:
            feature_perm = np.arange(d)
            label_perm = np.arange(k)
        else:
            perm_rng = _rng(spec.seed, 0x9E84, i)
            feature_perm = perm_rng.permutation(d)
            label_perm = perm_rng.permutation(k)
        view = _permuted_view(dataset, feature_perm, label_perm)
        member_cfg = replace(cfg, seed=seed_i)
        prompt = init_prompt(member_cfg, view, model)
        prompt, trace = tune(model, prompt, view, member_cfg)
        members.append(EnsembleMember(prompt=prompt, feature_perm=feature_perm,
                                      label_perm=label_perm,
                                      validation_score=trace.best_accuracy,
                                      index=i))
        traces.append(trace)
    ranking = sorted(range(spec.members),
                     key=lambda i: (-members[i].validation_score, i))
    return Ensemble(members=members, ranking=ranking, top_k=spec.top_k,
                    class_count=k), traces


def predict_ensemble(model: PfnModel, ensemble: Ensemble, dataset: TabularDataset,
                     eval_mode: str = "nc",
                     context_budget: int = DEFAULT_CONTEXT_BUDGET,
                     rows: str | np.ndarray = "test",
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Average the top-ranked members' probabilities, unpermuting labels."""
    chosen = ensemble.ranking[:ensemble.top_k]
    total = None
    for i in chosen:
        member = ensemble.members[i]
        view = _permuted_view(dataset, member.feature_perm, member.label_perm)
        _, probs = predict(model, member.prompt, view, eval_mode=eval_mode,
                           context_budget=context_budget, rows=rows, seed=seed)
        unpermuted = np.empty_like(probs)
        unpermuted[:, :] = probs[:, member.label_perm]
        total = unpermuted if total is None else total + unpermuted
    mean_probs = total / len(chosen)
    return np.argmax(mean_probs, axis=1), mean_probs


# -- persistence -----------------------------------------------------------------------

PROMPT_MANIFEST = "prompt.json"
PROMPT_BLOB = "x_part.bin"
RANKING_MANIFEST = "ranking.json"


def save_prompt(prompt: TunedPrompt, path: str, cfg: TuneConfig | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    manifest = {
        "p": prompt.p,
        "class_count": prompt.class_count,
        "y_part": prompt.y_part.tolist(),
        "validation_score": prompt.validation_score,
        "config": cfg.to_dict() if cfg is not None else None,
    }
    with open(os.path.join(path, PROMPT_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    with open(os.path.join(path, PROMPT_BLOB), "wb") as fh:
        T.write_tensor(prompt.x_part, fh)


def load_prompt(path: str) -> tuple[TunedPrompt, TuneConfig | None]:
    with open(os.path.join(path, PROMPT_MANIFEST), encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(os.path.join(path, PROMPT_BLOB), "rb") as fh:
        x_part = T.read_tensor(fh)
    x_part.requires_grad = True
    prompt = TunedPrompt(x_part, np.asarray(manifest["y_part"]),
                         manifest["class_count"])
    prompt.validation_score = manifest.get("validation_score")
    cfg = TuneConfig.from_dict(manifest["config"]) if manifest.get("config") else None
    return prompt, cfg


def save_ensemble(ensemble: Ensemble, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    meta = {
        "top_k": ensemble.top_k,
        "class_count": ensemble.class_count,
        "ranking": ensemble.ranking,
        "members": [],
    }
    for member in ensemble.members:
        sub = os.path.join(path, f"member_{member.index:02d}")
        save_prompt(member.prompt, sub)
        meta["members"].append({
            "index": member.index,
            "feature_perm": member.feature_perm.tolist(),
            "label_perm": member.label_perm.tolist(),
            "validation_score": member.validation_score,
            "path": os.path.basename(sub),
        })
    with open(os.path.join(path, RANKING_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)


def load_ensemble(path: str) -> Ensemble:
    with open(os.path.join(path, RANKING_MANIFEST), encoding="utf-8") as fh:
        meta = json.load(fh)
    members = []
    for entry in meta["members"]:
        prompt, _ = load_prompt(os.path.join(path, entry["path"]))
        members.append(EnsembleMember(
            prompt=prompt,
            feature_perm=np.asarray(entry["feature_perm"], dtype=np.int64),
            label_perm=np.asarray(entry["label_perm"], dtype=np.int64),
            validation_score=entry["validation_score"],
            index=entry["index"],
        ))
    return Ensemble(members=members, ranking=list(meta["ranking"]),
                    top_k=meta["top_k"], class_count=meta["class_count"])
