"""Tensor-level reverse-mode differentiation on a linear tape.

Every primitive is a ``(forward, backward)`` pair over numpy arrays.
``forward(*values, **attrs)`` returns ``(out, ctx)``; ``backward(ctx, grad,
*values, **attrs)`` returns one gradient (or ``None``) per input. Nodes are
appended in execution order, so walking the tape backwards is a valid
topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.value.shape})"


@dataclass
class Node:
    op: str
    inputs: tuple
    attrs: dict
    output: Tensor
    ctx: object


OPS: dict[str, tuple[Callable, Callable]] = {}


def primitive(name: str):
    def register(cls):
        OPS[name] = (cls.forward, cls.backward)
        return cls
    return register


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


@primitive("add")
class _Add:
    @staticmethod
    def forward(a, b):
        return a + b, None

    @staticmethod
    def backward(ctx, g, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@primitive("mul")
class _Mul:
    @staticmethod
    def forward(a, b):
        return a * b, None

    @staticmethod
    def backward(ctx, g, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@primitive("scale")
class _Scale:
    @staticmethod
    def forward(a, *, c):
        return a * c, None

    @staticmethod
    def backward(ctx, g, a, *, c):
        return (g * c,)


@primitive("matmul")
class _Matmul:
    """``a @ b``; a 2-D ``b`` is shared across all leading dims of ``a``."""

    @staticmethod
    def forward(a, b):
        return a @ b, None

    @staticmethod
    def backward(ctx, g, a, b):
        ga = g @ np.swapaxes(b, -1, -2)
        if b.ndim == 2:
            gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb


@primitive("reshape")
class _Reshape:
    @staticmethod
    def forward(a, *, shape):
        return a.reshape(shape), None

    @staticmethod
    def backward(ctx, g, a, *, shape):
        return (g.reshape(a.shape),)


@primitive("transpose")
class _Transpose:
    @staticmethod
    def forward(a, *, axes):
        return np.transpose(a, axes), None

    @staticmethod
    def backward(ctx, g, a, *, axes):
        return (np.transpose(g, np.argsort(axes)),)


@primitive("relu")
class _Relu:
    @staticmethod
    def forward(a):
        return np.maximum(a, 0.0), None

    @staticmethod
    def backward(ctx, g, a):
        return (g * (a > 0),)


@primitive("mean")
class _Mean:
    @staticmethod
    def forward(a, *, axis=None):
        return np.mean(a, axis=axis), None

    @staticmethod
    def backward(ctx, g, a, *, axis=None):
        if axis is None:
            return (np.full(a.shape, g / a.size),)
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        n = np.prod([a.shape[ax] for ax in axes])
        return (np.broadcast_to(np.expand_dims(g, axes), a.shape) / n,)


@primitive("gather")
class _Gather:
    """``a[i, index[i]]`` for a 2-D ``a``."""

    @staticmethod
    def forward(a, *, index):
        idx = np.asarray(index)
        return a[np.arange(a.shape[0]), idx], None

    @staticmethod
    def backward(ctx, g, a, *, index):
        out = np.zeros_like(a)
        out[np.arange(a.shape[0]), np.asarray(index)] = g
        return (out,)


@primitive("conv1d")
class _Conv1d:
    """Cross-correlation of ``x (B, Cin, L)`` with ``w (Cout, Cin, K)``."""

    @staticmethod
    def forward(x, w, b, *, stride=1, padding=0):
        if padding:
            x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
        k = w.shape[2]
        cols = sliding_window_view(x, k, axis=2)[:, :, ::stride, :]  # (B, Cin, T, K)
        bsz, cin, t, _ = cols.shape
        flat = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(bsz * t, cin * k)
        out = flat @ w.reshape(w.shape[0], -1).T + b  # (B*T, Cout)
        out = out.reshape(bsz, t, -1).transpose(0, 2, 1)
        return np.ascontiguousarray(out), (flat, x.shape)

    @staticmethod
    def backward(ctx, g, x, w, b, *, stride=1, padding=0):
        flat, padded_shape = ctx
        bsz, cout, t = g.shape
        cin, k = w.shape[1], w.shape[2]
        g2 = g.transpose(0, 2, 1).reshape(bsz * t, cout)
        gw = (g2.T @ flat).reshape(w.shape)
        gb = g2.sum(axis=0)
        gcols = (g2 @ w.reshape(cout, -1)).reshape(bsz, t, cin, k)
        gx = np.zeros(padded_shape)
        span = stride * (t - 1) + 1
        for j in range(k):
            gx[:, :, j:j + span:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
        if padding:
            gx = gx[:, :, padding:-padding]
        return gx, gw, gb


@primitive("softmax_masked")
class _SoftmaxMasked:
    """Softmax over the last axis; entries where ``mask`` is False get weight 0."""

    @staticmethod
    def forward(s, *, mask):
        z = np.where(mask, s, -np.inf)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        return p, p

    @staticmethod
    def backward(p, g, s, *, mask):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)


@primitive("layernorm")
class _LayerNorm:
    @staticmethod
    def forward(x, gamma, beta, *, eps=1e-5):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        return xhat * gamma + beta, (xhat, inv)

    @staticmethod
    def backward(ctx, g, x, gamma, beta, *, eps=1e-5):
        xhat, inv = ctx
        n = x.shape[-1]
        lead = tuple(range(x.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gx_hat = g * gamma
        gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, ggamma, gbeta


@primitive("batchnorm")
class _BatchNorm:
    """Per-channel normalization of ``x (B, C, T)``.

    With ``stats=None`` the batch mean/variance over (B, T) are used and
    differentiated through; otherwise ``stats = (mean, var)`` are constants.
    """

    @staticmethod
    def forward(x, gamma, beta, *, stats=None, eps=1e-5):
        if stats is None:
            mu = x.mean(axis=(0, 2), keepdims=True)
            var = ((x - mu) ** 2).mean(axis=(0, 2), keepdims=True)
        else:
            mu = np.asarray(stats[0]).reshape(1, -1, 1)
            var = np.asarray(stats[1]).reshape(1, -1, 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        out = xhat * gamma.reshape(1, -1, 1) + beta.reshape(1, -1, 1)
        return out, (xhat, inv, mu.ravel(), var.ravel())

    @staticmethod
    def backward(ctx, g, x, gamma, beta, *, stats=None, eps=1e-5):
        xhat, inv, _, _ = ctx
        ggamma = (g * xhat).sum(axis=(0, 2))
        gbeta = g.sum(axis=(0, 2))
        gx_hat = g * gamma.reshape(1, -1, 1)
        if stats is not None:
            return gx_hat * inv, ggamma, gbeta
        n = x.shape[0] * x.shape[2]
        gx = inv / n * (n * gx_hat - gx_hat.sum(axis=(0, 2), keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=(0, 2), keepdims=True))
        return gx, ggamma, gbeta


def rope_angles(positions, dim: int, base: float) -> np.ndarray:
    """Angle table ``(len(positions), dim // 2)`` with ``theta_i = base^(-2i/dim)``."""
    if dim % 2:
        raise ValueError(f"rotary embedding needs an even dimension, got {dim}")
    inv_freq = base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    return np.outer(np.asarray(positions, dtype=np.float64), inv_freq)


def _rotate(x, cos, sin):
    xe, xo = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = xe * cos - xo * sin
    out[..., 1::2] = xe * sin + xo * cos
    return out


@primitive("rope")
class _Rope:
    """Rotate dimension pairs ``(2i, 2i+1)`` of ``x (..., T, d)`` by ``pos * theta_i``."""

    @staticmethod
    def forward(x, *, positions, base):
        ang = rope_angles(positions, x.shape[-1], base)
        cos, sin = np.cos(ang), np.sin(ang)
        return _rotate(x, cos, sin), (cos, sin)

    @staticmethod
    def backward(ctx, g, x, *, positions, base):
        cos, sin = ctx
        return (_rotate(g, cos, -sin),)


@primitive("cross_entropy")
class _CrossEntropy:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""

    @staticmethod
    def forward(logits, *, labels):
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        idx = np.asarray(labels)
        loss = -logp[np.arange(len(idx)), idx].mean()
        return np.asarray(loss), logp

    @staticmethod
    def backward(logp, g, logits, *, labels):
        idx = np.asarray(labels)
        p = np.exp(logp)
        p[np.arange(len(idx)), idx] -= 1.0
        return (p * (g / len(idx)),)


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    marks: dict = field(default_factory=dict)

    def leaf(self, value, requires_grad: bool = False, name: str | None = None) -> Tensor:
        return Tensor(np.asarray(value, dtype=np.float64), requires_grad, name)

    def apply(self, op: str, *inputs: Tensor, **attrs) -> Tensor:
        forward, _ = OPS[op]
        value, ctx = forward(*(t.value for t in inputs), **attrs)
        out = Tensor(value, any(t.requires_grad for t in inputs))
        self.nodes.append(Node(op, inputs, attrs, out, ctx))
        return out

    def mark(self, name: str, t: Tensor) -> Tensor:
        t.name = name
        self.marks[name] = t
        return t

    def backward(self, output: Tensor, grad=None) -> None:
        """Accumulate ``d output / d t`` into ``t.grad`` for every tensor on the tape."""
        output.grad = np.ones_like(output.value) if grad is None else np.asarray(grad, float)
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None or not node.output.requires_grad:
                continue
            _, backward = OPS[node.op]
            grads = backward(node.ctx, g, *(t.value for t in node.inputs), **node.attrs)
            for t, gi in zip(node.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi

    def zero_grad(self) -> None:
        for node in self.nodes:
            node.output.grad = None
            for t in node.inputs:
                t.grad = None

    def replay(self) -> bool:
        """Re-run every recorded primitive; True when all outputs match bit-exactly."""
        for node in self.nodes:
            forward, _ = OPS[node.op]
            value, _ = forward(*(t.value for t in node.inputs), **node.attrs)
            if not np.array_equal(value, node.output.value):
                return False
        return True
