"""Small reverse-mode autodiff engine over numpy arrays.

Only the layer kinds needed by the desk-scale networks are provided: dense,
2-D convolution (NHWC), max-pooling, batch normalization, hard-tanh, and
softmax cross-entropy.  Every op records a closure that maps the upstream
gradient onto its parents; :meth:`Tensor.backward` replays them in reverse
topological order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, _parents: Sequence["Tensor"] = (),
                 _backward: Callable[[np.ndarray], None] | None = None, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = tuple(_parents)
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        if grad is None:
            grad = np.ones_like(self.data)
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def check_finite(t: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values at {where}")
    return t


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))
    return Tensor(a.data + b.data, _parents=(a, b), _backward=bw)


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, _parents=(a,), _backward=lambda g: a._accumulate(-g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))
    return Tensor(a.data * b.data, _parents=(a, b), _backward=bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)
    return Tensor(a.data @ b.data, _parents=(a, b), _backward=bw)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor(a.data.reshape(shape), _parents=(a,),
                  _backward=lambda g: a._accumulate(g.reshape(a.shape)))


def take(a: Tensor, index: int) -> Tensor:
    """``a[index]`` along the leading axis."""
    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a._accumulate(full)
    return Tensor(a.data[index], _parents=(a,), _backward=bw)


def total(a: Tensor) -> Tensor:
    return Tensor(a.data.sum(), _parents=(a,),
                  _backward=lambda g: a._accumulate(np.broadcast_to(g, a.shape)))


def hardtanh(a: Tensor) -> Tensor:
    pass_mask = np.abs(a.data) <= 1.0
    return Tensor(np.clip(a.data, -1.0, 1.0), _parents=(a,),
                  _backward=lambda g: a._accumulate(g * pass_mask))


def l2_norm(tensors: Sequence[Tensor]) -> Tensor:
    """sqrt of the sum of squares of every element of every tensor."""
    sq = sum(float(np.sum(t.data * t.data)) for t in tensors)
    norm = np.sqrt(sq)

    def bw(g):
        if norm == 0.0:
            return
        for t in tensors:
            t._accumulate(g * t.data / norm)
    return Tensor(norm, _parents=tuple(tensors), _backward=bw)


# --------------------------------------------------------------------- layers

def dense_forward(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y[..., o] = sum_i w[o, i] * x[..., i]"""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ConfigError(f"dense shape mismatch: w{w.shape} vs x{x.shape}")
    return x @ w.T


def dense(x: Tensor, w: Tensor) -> Tensor:
    if x.shape[-1] != w.shape[1]:
        raise ConfigError(f"dense shape mismatch: w{w.shape} vs x{x.shape}")
    return matmul(x, transpose(w))


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.data.T, _parents=(a,), _backward=lambda g: a._accumulate(g.T))


def _out_size(n: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        out = -(-n // stride)
        pad = max((out - 1) * stride + k - n, 0)
        return out, pad
    if k > n:
        raise ConfigError(f"kernel {k} larger than input {n}")
    return (n - k) // stride + 1, 0


def conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    ho, ph = _out_size(h, kh, stride, padding)
    wo, pw = _out_size(w, kw, stride, padding)
    return ho, wo, (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: str = "valid",
           pad_value: float = 0.0) -> tuple[np.ndarray, tuple]:
    """NHWC -> (N*Ho*Wo, kh*kw*C) patches ordered (ky, kx, c)."""
    n, h, w, c = x.shape
    ho, wo, (pt, pb), (pl, pr) = conv_geometry(h, w, kh, kw, stride, padding)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=pad_value)
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, :, :, ky, kx, :] = x[:, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride, :]
    return cols.reshape(n * ho * wo, kh * kw * c), (n, h, w, c, ho, wo, pt, pl)


def col2im(dcols: np.ndarray, geom: tuple, kh: int, kw: int, stride: int) -> np.ndarray:
    n, h, w, c, ho, wo, pt, pl = geom
    hp = max(h + pt, (ho - 1) * stride + kh)
    wp = max(w + pl, (wo - 1) * stride + kw)
    dx = np.zeros((n, hp, wp, c))
    d = dcols.reshape(n, ho, wo, kh, kw, c)
    for ky in range(kh):
        for kx in range(kw):
            dx[:, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride, :] += d[:, :, :, ky, kx, :]
    return dx[:, pt:pt + h, pl:pl + w, :]


def conv2d_forward(w: np.ndarray, x: np.ndarray, stride: int = 1, padding: str = "valid") -> np.ndarray:
    """Cross-correlation.  ``w`` is (O, kh, kw, C) and ``x`` is (N, H, W, C); plain
    2-D arrays are promoted to a single channel / single image."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    squeeze = False
    if w.ndim == 2:
        w = w[None, :, :, None]
    if x.ndim == 2:
        x = x[None, :, :, None]
        squeeze = True
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    o, kh, kw, c = w.shape
    if x.shape[3] != c:
        raise ConfigError(f"channel mismatch: kernel {c} vs input {x.shape[3]}")
    cols, geom = im2col(x, kh, kw, stride, padding)
    n, _, _, _, ho, wo, _, _ = geom
    y = (cols @ w.reshape(o, -1).T).reshape(n, ho, wo, o)
    return y[0, :, :, 0] if squeeze and o == 1 else y


def conv2d(x: Tensor, w: Tensor, kh: int, kw: int, stride: int = 1, padding: str = "valid",
           pad_value: float = 0.0) -> Tensor:
    """``w`` is stored flattened as (O, kh*kw*C)."""
    cols, geom = im2col(x.data, kh, kw, stride, padding, pad_value)
    n, _, _, _, ho, wo, _, _ = geom
    o = w.shape[0]
    y = (cols @ w.data.T).reshape(n, ho, wo, o)

    def bw(g):
        g2 = g.reshape(-1, o)
        w._accumulate(g2.T @ cols)
        if x.requires_grad:
            x._accumulate(col2im(g2 @ w.data, geom, kh, kw, stride))
    return Tensor(y, _parents=(x, w), _backward=bw)


def patches(x: Tensor, kh: int, kw: int, stride: int = 1, padding: str = "valid",
            pad_value: float = 0.0) -> Tensor:
    """im2col as a differentiable op; returns (N, Ho, Wo, kh*kw*C)."""
    cols, geom = im2col(x.data, kh, kw, stride, padding, pad_value)
    n, _, _, _, ho, wo, _, _ = geom

    def bw(g):
        x._accumulate(col2im(g.reshape(cols.shape), geom, kh, kw, stride))
    return Tensor(cols.reshape(n, ho, wo, -1), _parents=(x,), _backward=bw)


def maxpool2d(x: Tensor, size: int) -> Tensor:
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    xc = x.data[:, :ho * size, :wo * size, :].reshape(n, ho, size, wo, size, c)
    xc = xc.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)
    arg = np.argmax(xc, axis=-1)
    y = np.take_along_axis(xc, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        d = np.zeros((n, ho, wo, c, size * size))
        np.put_along_axis(d, arg[..., None], g[..., None], axis=-1)
        d = d.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * size, wo * size, c)
        full = np.zeros_like(x.data)
        full[:, :ho * size, :wo * size, :] = d
        x._accumulate(full)
    return Tensor(y, _parents=(x,), _backward=bw)


def maxpool2d_forward(x: np.ndarray, size: int) -> np.ndarray:
    return maxpool2d(Tensor(x), size).data


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer (per feature / channel)."""
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


def batchnorm(x: Tensor, scale: Tensor, shift: Tensor, state: BatchNormState, train: bool) -> Tensor:
    axes = tuple(range(x.data.ndim - 1))
    if not train:
        std = np.sqrt(state.var + state.eps)
        xhat = (x.data - state.mean) / std

        def bw_eval(g):
            scale._accumulate((g * xhat).sum(axis=axes))
            shift._accumulate(g.sum(axis=axes))
            x._accumulate(g * scale.data / std)
        return Tensor(xhat * scale.data + shift.data, _parents=(x, scale, shift), _backward=bw_eval)

    m = x.data.size // x.data.shape[-1]
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    std = np.sqrt(var + state.eps)
    xhat = (x.data - mu) / std
    state.mean = (1 - state.momentum) * state.mean + state.momentum * mu
    state.var = (1 - state.momentum) * state.var + state.momentum * var * m / max(m - 1, 1)

    def bw(g):
        scale._accumulate((g * xhat).sum(axis=axes))
        shift._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx = g * scale.data
            dx = (gx - gx.mean(axis=axes) - xhat * (gx * xhat).mean(axis=axes)) / std
            x._accumulate(dx)
    return Tensor(xhat * scale.data + shift.data, _parents=(x, scale, shift), _backward=bw)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels``."""
    n = logits.shape[0]
    logp = log_softmax(logits.data)
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1.0
        logits._accumulate(g * d / n)
    return Tensor(loss, _parents=(logits,), _backward=bw)


# ------------------------------------------------------------------ optimizers

class SGD:
    def __init__(self, params: Iterable[Tensor], lr: float = 0.01, momentum: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._vel = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self._vel):
            if p.grad is None:
                continue
            if self.momentum:
                v *= self.momentum
                v += p.grad
                p.data -= self.lr * v
            else:
                p.data -= self.lr * p.grad


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(kind: str, params: Iterable[Tensor], lr: float):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


def optimizer_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], kind: str = "sgd", lr: float = 0.01):
    """One-shot functional update; mostly for tests and scripts."""
    for p, g in zip(params, grads):
        p.grad = np.asarray(g, dtype=np.float64)
    opt = make_optimizer(kind, params, lr)
    opt.step()
    return [p.data for p in params]
