"""Dense-tensor math with reverse-mode gradients and the AdamW optimizer.

A Tensor wraps a numpy float array. Every primitive records a backward
closure on its output; Tensor.backward() replays the closures in reverse
topological order, accumulates gradients into .grad buffers, and releases
the graph. float32 is the working precision; float64 inputs are kept as-is
so gradient checks can run in double precision.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import PsaeError


class ShapeMismatch(PsaeError):
    pass


class EmptyBatch(PsaeError):
    pass


class NoRecordedGraph(PsaeError):
    pass


class Tensor:
    """N-d float array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Populate .grad on every ancestor that requires grad, then release
        the recorded graph. Raises NoRecordedGraph if this tensor was not
        produced by a recorded forward pass."""
        if self._backward is None:
            raise NoRecordedGraph("tensor has no recorded forward graph")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        for node in topo:
            node._parents = ()
            node._backward = None

    # Arithmetic sugar used by the loss plumbing. Scalars stay in the
    # tensor's own dtype so float32 graphs are not silently promoted.
    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return add(self, neg(self._coerce(other)))

    def __rsub__(self, other):
        return add(self._coerce(other), neg(self))

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self._coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    tracked = tuple(p for p in parents if p.requires_grad)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _unbroadcast_batch(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Like _unbroadcast but only over the batch prefix; the trailing two
    (matrix) axes are guaranteed to match already."""
    batch = shape[:-2]
    extra = (g.ndim - 2) - len(batch)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(batch) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def absolute(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(np.sign(a.data) * g)

    return _make(np.abs(a.data), (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast_batch(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast_batch(gb, b.shape))

    return _make(data, (a, b), backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    if bias.ndim != 1 or bias.shape[0] != x.shape[-1]:
        raise ShapeMismatch(f"add_bias: bias {bias.shape} vs features {x.shape}")
    return add(x, bias)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape

    def backward(g):
        x._accumulate(g.reshape(old))

    return _make(x.data.reshape(shape), (x,), backward)


def swap_axes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    def backward(g):
        x._accumulate(np.swapaxes(g, axis1, axis2))

    return _make(np.swapaxes(x.data, axis1, axis2), (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact gaussian-error-linear unit x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / np.sqrt(xd.dtype.type(2.0))))
    data = xd * cdf

    def backward(g):
        pdf = np.exp(-0.5 * xd * xd) / np.sqrt(xd.dtype.type(2.0 * np.pi))
        x._accumulate(g * (cdf + xd * pdf))

    return _make(data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layer_norm: gain {gain.shape}/bias {bias.shape} vs features {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            x._accumulate(inv * (gh - gh.mean(axis=-1, keepdims=True)
                                 - xhat * (gh * xhat).mean(axis=-1, keepdims=True)))

    return _make(data, (x, gain, bias), backward)


def softmax(x: Tensor) -> Tensor:
    """Stabilized softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _make(s, (x,), backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: output shape ids.shape + (embed_dim,)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(f"embedding ids outside table of {table.shape[0]} rows")
    data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        table._accumulate(gt)

    return _make(data, (table,), backward)


def gather_positions(x: Tensor, batch_idx: np.ndarray, pos_idx: np.ndarray) -> Tensor:
    """Select rows (batch_idx[i], pos_idx[i], :) from a [B, L, C] tensor."""
    if x.ndim != 3:
        raise ShapeMismatch(f"gather_positions expects a 3-d tensor, got {x.shape}")
    data = x.data[batch_idx, pos_idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (batch_idx, pos_idx), g)
        x._accumulate(gx)

    return _make(data, (x,), backward)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor,
                                 padding_mask: np.ndarray | None = None) -> Tensor:
    """Softmax(q k^T / sqrt(d)) v over [batch, heads, length, head_dim].

    padding_mask is a boolean [batch, length] array, True at PAD positions;
    masked keys get an additive -1e9 before softmax, which underflows to an
    exactly-zero attention weight.
    """
    if not (q.ndim == k.ndim == v.ndim == 4):
        raise ShapeMismatch(f"attention expects 4-d q/k/v, got {q.shape}/{k.shape}/{v.shape}")
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"attention: incompatible q/k/v {q.shape}/{k.shape}/{v.shape}")
    head_dim = q.shape[-1]
    scale = Tensor(np.asarray(1.0 / np.sqrt(head_dim), dtype=q.dtype))
    scores = mul(matmul(q, swap_axes(k, -1, -2)), scale)
    if padding_mask is not None:
        padding_mask = np.asarray(padding_mask, dtype=bool)
        if padding_mask.shape != (q.shape[0], k.shape[-2]):
            raise ShapeMismatch(
                f"attention: padding_mask {padding_mask.shape} vs batch/keys "
                f"({q.shape[0]}, {k.shape[-2]})")
        bias = np.where(padding_mask, -1e9, 0.0).astype(q.dtype)
        scores = add(scores, Tensor(bias[:, None, None, :]))
    return matmul(softmax(scores), v)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits).

    logits: [n, classes]; targets: [n] ints. Stabilized by max-subtraction.
    """
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ShapeMismatch(f"cross entropy expects [n, classes] logits, got {logits.shape}")
    n, c = logits.shape
    if n == 0:
        raise EmptyBatch("cross entropy over zero rows")
    if targets.shape != (n,):
        raise ShapeMismatch(f"targets {targets.shape} vs logits rows {n}")
    if targets.min() < 0 or targets.max() >= c:
        raise ShapeMismatch(f"targets outside [0, {c})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    nll = lse - z[np.arange(n), targets]
    data = np.asarray(nll.mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), targets] -= 1.0
        logits._accumulate(p * (g / n))

    return _make(data, (logits,), backward)


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    Decay applies only to matrix-shaped parameters (ndim >= 2): weight
    matrices and embeddings, never biases or layer-norm gains. Pass a
    custom decay_filter(name, tensor) -> bool to override.
    """

    def __init__(self, params: dict[str, Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8,
                 weight_decay: float = 0.01, decay_filter=None):
        if decay_filter is None:
            decay_filter = lambda name, p: p.ndim >= 2
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._decayed = {name: bool(decay_filter(name, p)) for name, p in self.params.items()}

    def step(self) -> None:
        """One in-place update over all parameters; missing grads count as zero."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeMismatch(f"grad {g.shape} vs param {p.data.shape} for {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            if self._decayed[name] and self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.learning_rate * update).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
