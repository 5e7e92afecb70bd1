"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is 64-bit and row-major. The op set is deliberately small and
each backward rule is written out explicitly so it can be audited and
checked against central finite differences. Broadcasting is not supported
except for adding a bias vector along the trailing axis.

A tensor that participates in a differentiable computation records its
parents and a local backward rule; calling ``backward()`` on a scalar
result builds a :class:`ComputationTape` (the nodes in topological order)
and replays it once in reverse. Tensors are treated as immutable while a
forward pass is in flight; parameter values are only mutated between
passes (by the optimizer), which keeps gradient accumulation single-writer.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special as _special

from .errors import (
    ConfigurationError,
    DimensionError,
    DistributionError,
    LabelError,
    NumericError,
    SerializationError,
)

EPS_LOG = 1e-12  # clamp applied to every log input

__all__ = [
    "Tensor",
    "ComputationTape",
    "matmul",
    "add",
    "add_bias",
    "sub",
    "mul",
    "scale",
    "neg",
    "transpose",
    "concat_rows",
    "slice_rows",
    "concat_cols",
    "slice_cols",
    "gather_rows",
    "gelu",
    "softmax",
    "masked_softmax",
    "multi_head_attention",
    "layer_norm",
    "sum_all",
    "mean_all",
    "abs_value",
    "cross_entropy",
    "kl_divergence",
    "grad_check",
    "AdamW",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "write_tensor",
    "read_tensor",
]


class Tensor:
    """A dense float64 array with an optional gradient accumulator."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_rule")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_rule: Callable[[], None] | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient machinery ---------------------------------------------------

    def zero_grad(self) -> None:
        """Reset the accumulator to all zeros (allocating it if needed)."""
        self.grad = np.zeros_like(self.values)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), requires_grad=False)

    def backward(self) -> None:
        """Propagate gradients from this scalar back to every ancestor."""
        if self.size != 1:
            raise DimensionError(
                f"backward() needs a scalar output, got shape {self.shape}"
            )
        tape = ComputationTape.trace(self)
        self._accumulate(np.ones_like(self.values))
        tape.run_backward()


class ComputationTape:
    """Topologically ordered record of one forward computation.

    ``run_backward`` visits each node exactly once in reverse topological
    order; with pure numpy kernels underneath the replay is bit-identical
    across runs.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @staticmethod
    def trace(root: Tensor) -> "ComputationTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return ComputationTape(order)

    def run_backward(self) -> None:
        for node in reversed(self.nodes):
            if node._backward_rule is not None and node.grad is not None:
                node._backward_rule()


def _make(values: np.ndarray, parents: Sequence[Tensor],
          rule: Callable[[Tensor], Callable[[], None]]) -> Tensor:
    """Wrap an op result; the backward rule is attached only when needed."""
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_rule = rule(out)
    return out


# -- arithmetic ----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    vals = a.values @ b.values

    def rule(out: Tensor):
        def backward():
            g = out.grad
            if a.requires_grad:
                a._accumulate(g @ b.values.T)
            if b.requires_grad:
                b._accumulate(a.values.T @ g)
        return backward

    return _make(vals, (a, b), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")

    def rule(out: Tensor):
        def backward():
            if a.requires_grad:
                a._accumulate(out.grad)
            if b.requires_grad:
                b._accumulate(out.grad)
        return backward

    return _make(a.values + b.values, (a, b), rule)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a vector to every row of a matrix (the one allowed broadcast)."""
    if x.values.ndim != 2 or bias.values.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise DimensionError(
            f"add_bias expects [m x n] + [n], got {x.shape} + {bias.shape}"
        )

    def rule(out: Tensor):
        def backward():
            if x.requires_grad:
                x._accumulate(out.grad)
            if bias.requires_grad:
                bias._accumulate(out.grad.sum(axis=0))
        return backward

    return _make(x.values + bias.values, (x, bias), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub shapes differ: {a.shape} vs {b.shape}")

    def rule(out: Tensor):
        def backward():
            if a.requires_grad:
                a._accumulate(out.grad)
            if b.requires_grad:
                b._accumulate(-out.grad)
        return backward

    return _make(a.values - b.values, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes differ: {a.shape} vs {b.shape}")

    def rule(out: Tensor):
        def backward():
            if a.requires_grad:
                a._accumulate(out.grad * b.values)
            if b.requires_grad:
                b._accumulate(out.grad * a.values)
        return backward

    return _make(a.values * b.values, (a, b), rule)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def rule(out: Tensor):
        def backward():
            a._accumulate(out.grad * c)
        return backward

    return _make(a.values * c, (a,), rule)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")

    def rule(out: Tensor):
        def backward():
            a._accumulate(np.ascontiguousarray(out.grad.T))
        return backward

    return _make(np.ascontiguousarray(a.values.T), (a,), rule)


# -- structural ops ------------------------------------------------------------


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    all_parts = list(parts)
    parts = [p for p in all_parts if p.shape[0] > 0] or all_parts[:1]
    widths = {p.shape[1] for p in parts if p.values.ndim == 2}
    if any(p.values.ndim != 2 for p in parts) or len(widths) != 1:
        raise DimensionError(
            "concat_rows expects matrices of equal width, got "
            + ", ".join(str(p.shape) for p in parts)
        )
    vals = np.concatenate([p.values for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def rule(out: Tensor):
        def backward():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p._accumulate(out.grad[lo:hi])
        return backward

    return _make(vals, tuple(parts), rule)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.values.ndim != 2 or not (0 <= start <= stop <= x.shape[0]):
        raise DimensionError(f"slice_rows [{start}:{stop}] invalid for {x.shape}")

    def rule(out: Tensor):
        def backward():
            g = np.zeros_like(x.values)
            g[start:stop] = out.grad
            x._accumulate(g)
        return backward

    return _make(x.values[start:stop].copy(), (x,), rule)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    heights = {p.shape[0] for p in parts}
    if any(p.values.ndim != 2 for p in parts) or len(heights) != 1:
        raise DimensionError(
            "concat_cols expects matrices of equal height, got "
            + ", ".join(str(p.shape) for p in parts)
        )
    vals = np.concatenate([p.values for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def rule(out: Tensor):
        def backward():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p._accumulate(np.ascontiguousarray(out.grad[:, lo:hi]))
        return backward

    return _make(vals, tuple(parts), rule)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.values.ndim != 2 or not (0 <= start <= stop <= x.shape[1]):
        raise DimensionError(f"slice_cols [{start}:{stop}] invalid for {x.shape}")

    def rule(out: Tensor):
        def backward():
            g = np.zeros_like(x.values)
            g[:, start:stop] = out.grad
            x._accumulate(g)
        return backward

    return _make(np.ascontiguousarray(x.values[:, start:stop]), (x,), rule)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows by integer index (embedding lookup / group selection)."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.values.ndim != 2:
        raise DimensionError(f"gather_rows expects a matrix, got {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise LabelError(
            f"gather index out of range [0, {x.shape[0]}): "
            f"min={idx.min() if idx.size else 0}, max={idx.max() if idx.size else 0}"
        )

    def rule(out: Tensor):
        def backward():
            g = np.zeros_like(x.values)
            np.add.at(g, idx, out.grad)
            x._accumulate(g)
        return backward

    return _make(x.values[idx], (x,), rule)


# -- nonlinearities ------------------------------------------------------------

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form (smooth everywhere)."""
    cdf = 0.5 * (1.0 + _special.erf(x.values * _INV_SQRT2))
    vals = x.values * cdf

    def rule(out: Tensor):
        def backward():
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x.values * x.values)
            x._accumulate(out.grad * (cdf + x.values * pdf))
        return backward

    return _make(vals, (x,), rule)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction; rows sum to 1 and stay finite for any input."""
    if x.shape[axis if axis >= 0 else x.values.ndim + axis] < 1:
        raise DimensionError(f"softmax along empty axis of shape {x.shape}")
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    vals = ex / ex.sum(axis=axis, keepdims=True)

    def rule(out: Tensor):
        def backward():
            g = out.grad
            y = out.values
            x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        return backward

    return _make(vals, (x,), rule)


def masked_softmax(scores: Tensor, allowed: np.ndarray) -> Tensor:
    """Row softmax over the positions where ``allowed`` is True.

    Disallowed positions get exactly zero probability and zero gradient.
    Every row must allow at least one position.
    """
    allowed = np.asarray(allowed, dtype=bool)
    if allowed.shape != scores.shape:
        raise DimensionError(
            f"mask shape {allowed.shape} does not match scores {scores.shape}"
        )
    if not allowed.any(axis=-1).all():
        raise DimensionError("masked_softmax: some row allows no position")
    neg_fill = np.where(allowed, scores.values, -np.inf)
    shifted = neg_fill - neg_fill.max(axis=-1, keepdims=True)
    ex = np.where(allowed, np.exp(shifted), 0.0)
    vals = ex / ex.sum(axis=-1, keepdims=True)

    def rule(out: Tensor):
        def backward():
            g = out.grad
            y = out.values
            scores._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))
        return backward

    return _make(vals, (scores,), rule)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, allowed: np.ndarray,
                         heads: int) -> Tensor:
    """Masked scaled-dot-product attention, all heads in one batched op.

    ``q``, ``k``, ``v`` are [S x e]; the width axis is split into ``heads``
    contiguous slices. ``allowed`` is a shared [S x S] boolean visibility
    matrix; disallowed positions receive exactly zero attention and zero
    gradient. Fusing the heads keeps the hot path in batched BLAS calls.
    """
    s, e = q.shape
    if k.shape != (s, e) or v.shape != (s, e):
        raise DimensionError(f"q/k/v shapes differ: {q.shape}/{k.shape}/{v.shape}")
    if e % heads != 0:
        raise DimensionError(f"width {e} not divisible by {heads} heads")
    allowed = np.asarray(allowed, dtype=bool)
    if allowed.shape != (s, s):
        raise DimensionError(f"mask shape {allowed.shape}, expected {(s, s)}")
    if s and not allowed.any(axis=-1).all():
        raise DimensionError("attention mask: some row allows no position")
    dh = e // heads
    inv_scale = 1.0 / np.sqrt(dh)
    qh = np.ascontiguousarray(q.values.reshape(s, heads, dh).transpose(1, 0, 2))
    kh = np.ascontiguousarray(k.values.reshape(s, heads, dh).transpose(1, 0, 2))
    vh = np.ascontiguousarray(v.values.reshape(s, heads, dh).transpose(1, 0, 2))
    scores = qh @ kh.transpose(0, 2, 1)
    scores *= inv_scale
    # additive mask: -1e30 underflows to exactly zero probability after exp
    scores += np.where(allowed, 0.0, -1e30)
    scores -= scores.max(axis=-1, keepdims=True)
    ex = np.exp(scores)
    probs = ex / ex.sum(axis=-1, keepdims=True)
    vals = np.ascontiguousarray((probs @ vh).transpose(1, 0, 2)).reshape(s, e)

    def rule(out: Tensor):
        def backward():
            g = np.ascontiguousarray(
                out.grad.reshape(s, heads, dh).transpose(1, 0, 2))
            dprobs = g @ vh.transpose(0, 2, 1)
            dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
            dscores *= inv_scale
            if v.requires_grad:
                dv = probs.transpose(0, 2, 1) @ g
                v._accumulate(np.ascontiguousarray(dv.transpose(1, 0, 2)).reshape(s, e))
            if q.requires_grad:
                dq = dscores @ kh
                q._accumulate(np.ascontiguousarray(dq.transpose(1, 0, 2)).reshape(s, e))
            if k.requires_grad:
                dk = dscores.transpose(0, 2, 1) @ qh
                k._accumulate(np.ascontiguousarray(dk.transpose(1, 0, 2)).reshape(s, e))
        return backward

    return _make(vals, (q, k, v), rule)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize each row of the trailing axis to mean 0 / variance 1, then affine."""
    if x.values.ndim != 2:
        raise DimensionError(f"layer_norm expects a matrix, got {x.shape}")
    n = x.shape[-1]
    if n == 0:
        raise DimensionError("layer_norm over a zero-length axis")
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(
            f"gain/bias must have shape ({n},), got {gain.shape}/{bias.shape}"
        )
    mu = x.values.mean(axis=-1, keepdims=True)
    xc = x.values - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    vals = xhat * gain.values + bias.values

    def rule(out: Tensor):
        def backward():
            g = out.grad
            if gain.requires_grad:
                gain._accumulate((g * xhat).sum(axis=0))
            if bias.requires_grad:
                bias._accumulate(g.sum(axis=0))
            if x.requires_grad:
                gx = g * gain.values
                x._accumulate(inv * (
                    gx
                    - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                ))
        return backward

    return _make(vals, (x, gain, bias), rule)


# -- reductions ----------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    def rule(out: Tensor):
        def backward():
            x._accumulate(np.full_like(x.values, out.grad.item()))
        return backward

    return _make(np.asarray(x.values.sum()), (x,), rule)


def mean_all(x: Tensor) -> Tensor:
    if x.size == 0:
        raise DimensionError("mean_all of an empty tensor")
    inv_n = 1.0 / x.size

    def rule(out: Tensor):
        def backward():
            x._accumulate(np.full_like(x.values, out.grad.item() * inv_n))
        return backward

    return _make(np.asarray(x.values.mean()), (x,), rule)


def abs_value(x: Tensor) -> Tensor:
    """Elementwise absolute value; subgradient at 0 is defined as 0."""
    sgn = np.sign(x.values)

    def rule(out: Tensor):
        def backward():
            x._accumulate(out.grad * sgn)
        return backward

    return _make(np.abs(x.values), (x,), rule)


# -- losses ---------------------------------------------------------------------


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax probability of the target class."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.values.ndim != 2 or t.ndim != 1 or t.shape[0] != logits.shape[0]:
        raise DimensionError(
            f"cross_entropy expects [B x C] logits and B targets, got "
            f"{logits.shape} and {t.shape}"
        )
    n, c = logits.shape
    bad = np.nonzero((t < 0) | (t >= c))[0]
    if bad.size:
        raise LabelError(
            f"target {t[bad[0]]} at index {bad[0]} outside [0, {c})"
        )
    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.values.max(axis=1)
    vals = np.asarray((lse - logits.values[np.arange(n), t]).mean())

    def rule(out: Tensor):
        def backward():
            p = np.exp(shifted)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(n), t] -= 1.0
            logits._accumulate(out.grad.item() * p / n)
        return backward

    return _make(vals, (logits,), rule)


def kl_divergence(p: Tensor, q: Tensor) -> Tensor:
    """Mean over rows of sum_j p_j * log(p_j / q_j), q floored at 1e-12.

    Both inputs must be row-normalized probabilities. Terms with p_j = 0
    contribute exactly zero; when p equals q row-wise the result is
    exactly zero because the log of the ratio cancels bitwise.
    """
    if p.shape != q.shape or p.values.ndim != 2:
        raise DimensionError(f"kl_divergence shapes: {p.shape} vs {q.shape}")
    for name, tens in (("p", p), ("q", q)):
        sums = tens.values.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise DistributionError(
                f"{name} rows must sum to 1 within 1e-6 "
                f"(worst deviation {np.abs(sums - 1.0).max():.3e})"
            )
    n = p.shape[0]
    qc = np.maximum(q.values, EPS_LOG)
    pc = np.maximum(p.values, EPS_LOG)
    log_ratio = np.log(pc) - np.log(qc)
    active = p.values > 0.0
    terms = np.where(active, p.values * log_ratio, 0.0)
    vals = np.asarray(terms.sum() / n)

    def rule(out: Tensor):
        def backward():
            g = out.grad.item() / n
            if q.requires_grad:
                # clamped entries are flat in q
                dq = np.where(active & (q.values > EPS_LOG), -p.values / qc, 0.0)
                q._accumulate(g * dq)
            if p.requires_grad:
                dp = np.where(active, log_ratio + 1.0, 0.0)
                p._accumulate(g * dp)
        return backward

    return _make(vals, (p, q), rule)


# -- verification ----------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |analytic - numeric| / max(1, |numeric|),
    so near-zero gradients are compared absolutely.
    """
    probe = Tensor(x.values.copy(), requires_grad=True)
    out = f(probe)
    if not np.isfinite(out.values).all():
        raise NumericError("grad_check: f(x) is non-finite")
    probe.zero_grad()
    out.backward()
    analytic = probe.grad.copy()

    flat = x.values.copy().reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(Tensor(flat.reshape(x.shape))).item()
        flat[i] = orig - h
        lo = f(Tensor(flat.reshape(x.shape))).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"grad_check: f non-finite near coordinate {i}")
        numeric[i] = (hi - lo) / (2.0 * h)
    numeric = numeric.reshape(x.shape)
    denom = np.maximum(1.0, np.abs(numeric))
    return float((np.abs(analytic - numeric) / denom).max())


# -- optimizer -------------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay.

    Defaults follow the usual convention: betas (0.9, 0.999), eps 1e-8 and
    zero weight decay. With zero gradients and zero decay a step leaves the
    parameters bit-unchanged.
    """

    def __init__(self, params: Iterable[Tensor], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = [np.zeros_like(p.values) for p in self.params]
        self._v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        """Apply one update; ``lr`` overrides the stored rate (for warmup)."""
        rate = self.lr if lr is None else float(lr)
        if rate <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {rate}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.values
            p.values -= rate * update


def adamw_step(params: Sequence[Tensor], lr: float,
               betas: tuple[float, float] = (0.9, 0.999),
               eps: float = 1e-8, weight_decay: float = 0.0,
               state: AdamW | None = None) -> AdamW:
    """One-shot functional wrapper around :class:`AdamW` (state is returned)."""
    opt = state if state is not None else AdamW(
        params, lr, betas=betas, eps=eps, weight_decay=weight_decay)
    opt.step(lr)
    return opt


# -- serialization ----------------------------------------------------------------

_MAGIC = b"PFNT"
_FORMAT_VERSION = 1


def tensor_to_bytes(t: Tensor) -> bytes:
    """Serialize: magic, u16 version, u8 rank, u32 extents, f64 values (all LE)."""
    shape = t.shape
    if len(shape) > 255:
        raise SerializationError(f"rank {len(shape)} exceeds u8")
    header = _MAGIC + struct.pack("<HB", _FORMAT_VERSION, len(shape))
    header += struct.pack(f"<{len(shape)}I", *shape)
    return header + np.ascontiguousarray(t.values, dtype="<f8").tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Parse one serialized tensor; returns (tensor, next offset)."""
    if buf[offset:offset + 4] != _MAGIC:
        raise SerializationError("bad magic; not a tensor blob")
    version, rank = struct.unpack_from("<HB", buf, offset + 4)
    if version != _FORMAT_VERSION:
        raise SerializationError(f"unsupported tensor format version {version}")
    pos = offset + 7
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    vals = np.frombuffer(buf, dtype="<f8", count=count, offset=pos)
    pos += 8 * count
    return Tensor(vals.reshape(shape).astype(np.float64)), pos


def write_tensor(t: Tensor, fh) -> None:
    fh.write(tensor_to_bytes(t))


def read_tensor(fh) -> Tensor:
    head = fh.read(7)
    if head[:4] != _MAGIC:
        raise SerializationError("bad magic; not a tensor blob")
    version, rank = struct.unpack("<HB", head[4:])
    if version != _FORMAT_VERSION:
        raise SerializationError(f"unsupported tensor format version {version}")
    shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(shape)) if rank else 1
    vals = np.frombuffer(fh.read(8 * count), dtype="<f8", count=count)
    return Tensor(vals.reshape(shape).astype(np.float64))
