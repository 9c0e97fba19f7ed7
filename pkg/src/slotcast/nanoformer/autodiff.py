"""Minimal reverse-mode differentiation over numpy arrays.

Only the operations the decoder needs are provided. Several of them are
fused (layer norm, GELU, causal softmax, cross-entropy) so that their
backward passes are written once, in closed form, and stay numerically
stable.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self.grad = grad
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
            if node.parents:
                node.grad = None  # interior gradients are not needed afterwards


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return Tensor(a.data + b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return Tensor(a.data * b.data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; ``b`` may be a 2-D weight shared over the batch."""
    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.data.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return Tensor(a.data @ b.data, (a, b), bw)


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return Tensor(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def split_last(x: Tensor, n: int) -> list[Tensor]:
    """Split the last axis into ``n`` equal parts."""
    size = x.shape[-1] // n
    outs = []
    for i in range(n):
        sl = slice(i * size, (i + 1) * size)

        def bw(g, sl=sl):
            full = np.zeros_like(x.data)
            full[..., sl] = g
            return (full,)
        outs.append(Tensor(x.data[..., sl], (x,), bw))
    return outs


def scale(x: Tensor, c: float) -> Tensor:
    return Tensor(x.data * c, (x,), lambda g: (g * c,))


def embedding(weight: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup ``weight[idx]``."""
    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, idx.reshape(-1), g.reshape(-1, weight.shape[-1]))
        return (gw,)
    return Tensor(weight.data[idx], (weight,), bw)


def layer_norm_raw(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    out, xhat, rstd = layer_norm_raw(x.data, gain.data, bias.data)

    def bw(g):
        gx_hat = g * gain.data
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        gx = (gx_hat - m1 - xhat * m2) * rstd
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)
    return Tensor(out, (x, gain, bias), bw)


def gelu_raw(x: np.ndarray) -> np.ndarray:
    return (0.5 * x * (1.0 + erf(x * _SQRT1_2))).astype(x.dtype, copy=False)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    def bw(g):
        d = x.data
        cdf = 0.5 * (1.0 + erf(d * _SQRT1_2))
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * d * d)
        return ((g * (cdf + d * pdf)).astype(d.dtype, copy=False),)
    return Tensor(gelu_raw(x.data), (x,), bw)


_MASKS: dict[tuple, np.ndarray] = {}


def _causal_mask(t_q: int, t_k: int, dtype) -> np.ndarray:
    key = (t_q, t_k, np.dtype(dtype).str)
    mask = _MASKS.get(key)
    if mask is None:
        # query i sits at absolute position t_k - t_q + i and may see keys <= that
        future = np.triu(np.ones((t_q, t_k), dtype=bool), k=t_k - t_q + 1)
        mask = np.where(future, -np.inf, 0.0).astype(dtype)
        mask.setflags(write=False)
        if len(_MASKS) > 64:
            _MASKS.clear()
        _MASKS[key] = mask
    return mask


def causal_softmax_raw(scores: np.ndarray) -> np.ndarray:
    """Row softmax with future keys masked; max-subtracted for stability."""
    s = scores + _causal_mask(*scores.shape[-2:], scores.dtype)
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s


def causal_softmax(scores: Tensor) -> Tensor:
    """Softmax over the last axis with future keys masked out."""
    p = causal_softmax_raw(scores.data)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)
    return Tensor(p, (scores,), bw)


def causal_attention(q: Tensor, k: Tensor, v: Tensor, dropout_rate: float = 0.0,
                     rng: np.random.Generator | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d) + causal mask) v for ``[B, H, T, d]`` inputs.

    The backward pass reuses the forward probabilities and works in place.
    """
    c = 1.0 / math.sqrt(q.shape[-1])
    kt = np.swapaxes(k.data, -1, -2)
    p = causal_softmax_raw(q.data @ kt * q.data.dtype.type(c))
    keep = None
    pd = p
    if dropout_rate > 0.0 and rng is not None:
        keep = (rng.random(p.shape) >= dropout_rate).astype(p.dtype) / (1.0 - dropout_rate)
        pd = p * keep
    out = pd @ v.data

    def bw(g):
        gv = np.swapaxes(pd, -1, -2) @ g
        gp = g @ np.swapaxes(v.data, -1, -2)
        if keep is not None:
            gp *= keep
        # softmax backward, in place: gs = p * (gp - rowsum(gp * p))
        row = (gp * p).sum(axis=-1, keepdims=True)
        gp -= row
        gp *= p
        gp *= gp.dtype.type(c)
        gq = gp @ k.data
        gk = np.swapaxes(gp, -1, -2) @ q.data
        return gq, gk, gv
    return Tensor(out, (q, k, v), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return Tensor(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean token-level cross-entropy, accumulated in float64."""
    z = logits.data.reshape(-1, logits.shape[-1]).astype(np.float64)
    t = np.asarray(targets).reshape(-1)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    n = z.shape[0]
    loss = (lse - z[np.arange(n), t]).mean()

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), t] -= 1.0
        gz = p * (float(g) / n)
        return (gz.reshape(logits.shape).astype(logits.data.dtype),)
    return Tensor(np.asarray(loss), (logits,), bw)
