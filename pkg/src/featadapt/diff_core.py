"""Minimal reverse-mode autodiff kernel on numpy arrays.

Everything trainable in this package is built from the handful of ops
defined here: broadcasting arithmetic, dense layers with tanh, softmax /
cross-entropy, cosine similarity, L2 norms, and a gradient-reversal hook.
All math runs in float64 so the finite-difference checker can be trusted
at tight tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LOG_CLAMP = 1e-12


class ZeroVectorError(ValueError):
    """Cosine similarity received a zero-norm vector."""


class NonFiniteGradientError(FloatingPointError):
    """An optimizer step saw a NaN/Inf gradient."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class Rng:
    """Deterministic counter-based random stream (Philox, fixed seed)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, lo: float, hi: float, shape) -> np.ndarray:
        return self._gen.uniform(lo, hi, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)

    def spawn(self) -> "Rng":
        return Rng(int(self._gen.integers(0, 2**63 - 1)))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """Node in the backward graph; wraps a float64 ndarray."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other.powi(-1.0)
        return self * (1.0 / other)

    def powi(self, exponent: float):
        out = Tensor(self.data**exponent, (self,))
        out._backward = lambda g: self._accumulate(
            g * exponent * self.data ** (exponent - 1.0)
        )
        return out

    def matmul(self, other: "Tensor"):
        other = as_tensor(other)
        out = Tensor(self.data @ other.data, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g @ np.swapaxes(other.data, -1, -2),
                                          self.data.shape))
            other._accumulate(_unbroadcast(np.swapaxes(self.data, -1, -2) @ g,
                                           other.data.shape))

        out._backward = back
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor(y, (self,))
        out._backward = lambda g: self._accumulate(g * (1.0 - y * y))
        return out

    def exp(self):
        y = np.exp(self.data)
        out = Tensor(y, (self,))
        out._backward = lambda g: self._accumulate(g * y)
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))
        out._backward = lambda g: self._accumulate(g / self.data)
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def take_rows(self, idx: np.ndarray):
        idx = np.asarray(idx)
        out = Tensor(self.data[idx], (self,))

        def back(g):
            acc = np.zeros_like(self.data)
            np.add.at(acc, idx, g)
            self._accumulate(acc)

        out._backward = back
        return out

    def item(self) -> float:
        return float(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- fused ops ------------------------------------------------------------


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Shift-invariant softmax along `axis`."""
    logits = as_tensor(logits)
    if logits.data.size == 0:
        raise ValueError("softmax of empty input")
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p, (logits,))

    def back(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        logits._accumulate(p * (g - dot))

    out._backward = back
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of `labels` under softmax(logits).

    Gradient w.r.t. logits is (softmax - onehot) / batch. Log-probs are
    clamped at LOG_CLAMP to keep confident mistakes finite.
    """
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size == 0:
        raise ValueError("cross_entropy on empty batch")
    p = softmax(logits).data
    rows = np.arange(labels.size)
    picked = np.maximum(p[rows, labels], LOG_CLAMP)
    loss = -np.log(picked).mean()
    out = Tensor(loss, (logits,))

    def back(g):
        d = p.copy()
        d[rows, labels] -= 1.0
        logits._accumulate(g * d / labels.size)

    out._backward = back
    return out


def entropy(logits: Tensor) -> Tensor:
    """Per-row prediction entropy -sum p log p; returns shape [batch]."""
    p = softmax(logits)
    logp = Tensor(np.log(np.maximum(p.data, LOG_CLAMP)), (p,))
    logp._backward = lambda g: p._accumulate(g / np.maximum(p.data, LOG_CLAMP))
    return -(p * logp).sum(axis=-1)


def cosine_rows(a: Tensor, b: np.ndarray) -> Tensor:
    """Row-wise cosine similarity between a (differentiable) and b (constant)."""
    a = as_tensor(a)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a.data, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na < 1e-300) or np.any(nb < 1e-300):
        raise ZeroVectorError("cosine similarity of a zero-norm vector")
    dot = (a.data * b).sum(axis=-1)
    cos = dot / (na * nb)
    out = Tensor(cos, (a,))

    def back(g):
        g = g[..., None]
        da = b / (na * nb)[..., None] - (cos / (na * na))[..., None] * a.data
        a._accumulate(g * da)

    out._backward = back
    return out


def l2norm_rows(x: Tensor) -> Tensor:
    """Row-wise Euclidean norm; gradient is x/||x|| (zero rows get zero grad)."""
    x = as_tensor(x)
    n = np.linalg.norm(x.data, axis=-1)
    out = Tensor(n, (x,))

    def back(g):
        safe = np.where(n > 0.0, n, 1.0)
        x._accumulate((g / safe)[..., None] * x.data * (n > 0.0)[..., None])

    out._backward = back
    return out


def grad_reverse(x: Tensor, weight: float) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by -weight."""
    out = Tensor(x.data, (x,))
    out._backward = lambda g: x._accumulate(-weight * g)
    return out


# -- parameters and optimizer ---------------------------------------------


class ParamTensor(Tensor):
    """Trainable tensor with Adam moment accumulators."""

    __slots__ = ("name", "m", "v", "step")

    def __init__(self, name: str, data):
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def glorot(name: str, shape: tuple, rng: Rng) -> ParamTensor:
    fan_in, fan_out = shape[-1], shape[0] if len(shape) > 1 else 1
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return ParamTensor(name, rng.uniform(-bound, bound, shape))


def zeros_param(name: str, shape: tuple) -> ParamTensor:
    return ParamTensor(name, np.zeros(shape))


def dense_tanh(x: Tensor, w: ParamTensor, b: ParamTensor) -> Tensor:
    """tanh(x W^T + b) for x of shape [..., in], w of [out, in]."""
    return affine(x, w, b).tanh()


def affine(x: Tensor, w: ParamTensor, b: ParamTensor) -> Tensor:
    x = as_tensor(x)
    if x.data.shape[-1] != w.data.shape[-1]:
        raise ValueError(
            f"shape mismatch: input dim {x.data.shape[-1]} vs weight {w.data.shape}"
        )
    wt = Tensor(w.data.T, (w,))
    wt._backward = lambda g: w._accumulate(g.T)
    return x.matmul(wt) + b


def adam_step(params: list[ParamTensor], lr: float):
    """In-place Adam update with bias correction; grads are zeroed after."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(p.name)
    for p in params:
        p.step += 1
        p.m = ADAM_BETA1 * p.m + (1.0 - ADAM_BETA1) * p.grad
        p.v = ADAM_BETA2 * p.v + (1.0 - ADAM_BETA2) * p.grad**2
        m_hat = p.m / (1.0 - ADAM_BETA1**p.step)
        v_hat = p.v / (1.0 - ADAM_BETA2**p.step)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        p.zero_grad()


# -- finite-difference checker ---------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)


def grad_check(loss_fn, params: list[ParamTensor], tolerance: float = 1e-5,
               h: float = 1e-6, floor: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn()` to central differences.

    `loss_fn` must be deterministic and rebuild its graph on every call.
    `floor` bounds the relative-error denominator from below so that
    near-zero gradient entries are judged on absolute error, where the
    finite-difference estimate itself carries ~1e-10 of roundoff noise.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {p.name: p.grad.copy() for p in params}
    for p in params:
        p.zero_grad()

    report = GradCheckReport(tolerance=tolerance)
    for p in params:
        a = analytic[p.name]
        max_rel = 0.0
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            num = (up - down) / (2.0 * h)
            ana = a.reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            max_rel = max(max_rel, rel)
        report.entries.append(
            GradCheckEntry(p.name, max_rel, max_rel < tolerance)
        )
    return report
