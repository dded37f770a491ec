"""Reverse-mode automatic differentiation over dense numpy arrays.

Everything learnable in this package runs on the small tape-based engine in
this module: float32 tensors, a fixed set of differentiable primitives
(matmul, dilated 1-D convolution, layer norm, softmax, embedding lookup,
concatenation, elementwise arithmetic, reductions), an Adam optimizer, a
seeded splittable RNG, and a central-finite-difference gradient checker used
as the test oracle for every analytic gradient.

Graphs are built define-by-run: calling ops on `Tensor` records the tape,
`backward()` on a scalar output accumulates gradients into every reachable
tensor with `requires_grad`. Repeated backward calls accumulate; call
`Parameters.zero_grad()` between steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested primitive."""


class NonFiniteError(ArithmeticError):
    """A forward pass produced NaN or Inf (checked when finite checks are on)."""


_FINITE_CHECKS = False

# When not None, relu() appends its activation pattern here. Used by the
# finite-difference checker to detect perturbations that cross a relu kink.
_RELU_TRACE: Optional[list] = None


def set_finite_checks(enabled: bool) -> None:
    """Globally enable per-op NaN/Inf detection (slow; meant for tests)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _check_finite(data: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by node '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over axes that were broadcast to recover `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense array plus the tape entry that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 dtype=DTYPE):
        arr = np.asarray(data)
        if dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple, backward: Callable, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out.name = op
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=None)

    def __repr__(self):
        tag = self.name or "tensor"
        return f"<Tensor {tag} shape={self.data.shape} grad={'yes' if self.grad is not None else 'no'}>"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def relu(self):
        return relu(self)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all reachable parameters."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar output, got shape {self.data.shape}")
        if not self.requires_grad:
            return
        topo: list[Tensor] = []
        seen = set()
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        seed = np.ones_like(self.data)
        self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else DTYPE
    return Tensor(np.asarray(x, dtype=dtype), dtype=None)


def const(x, dtype=DTYPE) -> Tensor:
    """A non-learnable tensor (masks, selector matrices, positional codes)."""
    return Tensor(x, requires_grad=False, dtype=dtype)


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.data.shape} with {b.data.shape}") from None

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.data.shape} with {b.data.shape}") from None

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._from_op(data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.data.shape} with {b.data.shape}") from None

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: cannot broadcast {a.data.shape} with {b.data.shape}") from None

    def backward(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._from_op(data, (a, b), backward, "div")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    if _RELU_TRACE is not None:
        _RELU_TRACE.append(mask)
    data = np.where(mask, x.data, 0)

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(data, (x,), backward, "relu")


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return Tensor._from_op(data, (x,), backward, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return (g * data * (1.0 - data),)

    return Tensor._from_op(data, (x,), backward, "sigmoid")


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.exp(x.data)

    def backward(g):
        return (g * data,)

    return Tensor._from_op(data, (x,), backward, "exp")


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return Tensor._from_op(data, (x,), backward, "log")


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.sqrt(x.data)

    def backward(g):
        return (g * (0.5 / data),)

    return Tensor._from_op(data, (x,), backward, "sqrt")


def absolute(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.abs(x.data)

    def backward(g):
        return (g * np.sign(x.data),)

    return Tensor._from_op(data, (x,), backward, "abs")


# -- reductions -------------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return Tensor._from_op(np.asarray(data), (x,), backward, "sum")


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -- linear algebra / structure ---------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(data, (a, b), backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got shape {x.data.shape}")
    data = np.ascontiguousarray(x.data.T)

    def backward(g):
        return (np.ascontiguousarray(g.T),)

    return Tensor._from_op(data, (x,), backward, "transpose")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - dot) * data,)

    return Tensor._from_op(data, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    probs = np.exp(data)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(data, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},), "
                         f"got {gain.data.shape}/{bias.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return Tensor._from_op(data, (x, gain, bias), backward, "layer_norm")


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           dilation: int = 1) -> Tensor:
    """Non-causal 1-D convolution with symmetric "same" zero padding.

    x: [T, C_in]; weight: [k, C_in, C_out] with odd k; output [T, C_out].
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 3:
        raise ShapeError(f"conv1d: expected x [T,Cin] and weight [k,Cin,Cout], "
                         f"got {x.data.shape} and {weight.data.shape}")
    k, cin, cout = weight.data.shape
    if k % 2 != 1:
        raise ShapeError(f"conv1d: kernel size must be odd for same padding, got {k}")
    if x.data.shape[1] != cin:
        raise ShapeError(f"conv1d: x has {x.data.shape[1]} channels, weight expects {cin}")
    t = x.data.shape[0]
    pad = dilation * (k - 1) // 2
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    span = dilation * (k - 1) + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, span, axis=0)[:, :, ::dilation]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(t, k * cin)
    w2 = weight.data.reshape(k * cin, cout)
    data = cols @ w2
    parents: tuple
    if bias is not None:
        bias = as_tensor(bias)
        if bias.data.shape != (cout,):
            raise ShapeError(f"conv1d: bias must have shape ({cout},), got {bias.data.shape}")
        data = data + bias.data
        parents = (x, weight, bias)
    else:
        parents = (x, weight)

    def backward(g):
        gw = (cols.T @ g).reshape(k, cin, cout)
        gcols = (g @ w2.T).reshape(t, k, cin)
        gxp = np.zeros_like(xp)
        for kk in range(k):
            gxp[kk * dilation:kk * dilation + t] += gcols[:, kk, :]
        gx = gxp[pad:pad + t] if pad else gxp
        if bias is not None:
            return gx, gw, g.sum(axis=0)
        return gx, gw

    return Tensor._from_op(data, parents, backward, "conv1d")


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: table [V, D] indexed by integer ids [n] -> [n, D]."""
    table = as_tensor(table)
    idx = np.asarray(ids)
    if idx.ndim != 1:
        raise ShapeError(f"embedding: ids must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(f"embedding: id out of range [0, {table.data.shape[0]}) "
                         f"(got min {idx.min()}, max {idx.max()})")
    data = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor._from_op(data, (table,), backward, "embedding")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input list")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.data.shape for t in ts]}") from None
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(ts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return Tensor._from_op(data, tuple(ts), backward, "concat")


def narrow(x: Tensor, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice of length `size` starting at `start` along `axis`."""
    x = as_tensor(x)
    if start < 0 or size < 0 or start + size > x.data.shape[axis]:
        raise ShapeError(f"narrow: slice [{start}:{start + size}] out of range for "
                         f"axis {axis} of shape {x.data.shape}")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + size)
    data = np.ascontiguousarray(x.data[tuple(sl)])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[tuple(sl)] = g
        return (gx,)

    return Tensor._from_op(data, (x,), backward, "narrow")


def cumsum(x: Tensor, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    data = np.cumsum(x.data, axis=axis)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)

    return Tensor._from_op(data, (x,), backward, "cumsum")


def assert_finite(x: Tensor, where: str) -> Tensor:
    """Raise NonFiniteError if x holds NaN/Inf; identity otherwise."""
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError(f"non-finite values at {where}")
    return x


# -- parameters and optimizer -------------------------------------------------


class Parameters:
    """Named collection of trainable tensors with per-tensor gradient slots."""

    def __init__(self):
        self._store: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._store:
            raise KeyError(f"duplicate parameter name: {name}")
        t = Tensor(data, requires_grad=True, name=name, dtype=None)
        self._store[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._store[name]

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def __len__(self) -> int:
        return len(self._store)

    def names(self) -> list[str]:
        return list(self._store)

    def items(self):
        return self._store.items()

    def tensors(self) -> list[Tensor]:
        return list(self._store.values())

    def zero_grad(self) -> None:
        for t in self._store.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._store.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values in; every parameter must be present with matching shape."""
        for name, t in self._store.items():
            if name not in arrays:
                raise KeyError(f"missing parameter in checkpoint: {name}")
            a = np.asarray(arrays[name], dtype=t.data.dtype)
            if a.shape != t.data.shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {a.shape} != "
                                 f"model shape {t.data.shape}")
            t.data = a.copy()

    def total_size(self) -> int:
        return sum(t.data.size for t in self._store.values())


class Adam:
    """Adam over an ordered parameter subset; skips tensors with no gradient."""

    def __init__(self, params: Iterable[tuple[str, Tensor]] | Parameters,
                 lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-8):
        if isinstance(params, Parameters):
            params = params.items()
        self.params: list[tuple[str, Tensor]] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for _, p in self.params]
        self._v = [np.zeros_like(p.data) for _, p in self.params]

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, (_, p) in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[i]
            v = self._v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# -- initializers -------------------------------------------------------------


def glorot(rng: "RngState", shape: tuple, fan_in: int, fan_out: int,
           dtype=DTYPE) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape).astype(dtype)


def normal_init(rng: "RngState", shape: tuple, std: float = 0.02,
                dtype=DTYPE) -> np.ndarray:
    return (rng.normal(shape) * std).astype(dtype)


# -- RNG -----------------------------------------------------------------------


@dataclass
class RngState:
    """Seeded PCG64 stream with deterministic, splittable substreams.

    Identical seed and call sequence give identical samples on any platform.
    `child(*key)` derives an independent substream addressed by the key path,
    so parallel corpus generation and per-item noise draws stay reproducible
    regardless of iteration order.
    """

    seed: int
    spawn_key: tuple = ()
    algorithm: str = "pcg64"
    _gen: Optional[np.random.Generator] = field(default=None, repr=False, compare=False)

    def _generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, *key: int) -> "RngState":
        return RngState(seed=self.seed, spawn_key=self.spawn_key + tuple(key))

    def normal(self, shape=None) -> np.ndarray:
        return self._generator().standard_normal(size=shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._generator().uniform(low, high, size=shape)

    def random(self, shape=None) -> np.ndarray:
        return self._generator().random(size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._generator().integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator().permutation(n)

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """Sample one category per row of a [n, K] probability matrix."""
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 2:
            raise ShapeError(f"categorical: probs must be 2-D, got shape {p.shape}")
        cum = np.cumsum(p, axis=1)
        cum /= cum[:, -1:]
        u = self._generator().random(p.shape[0])
        ids = (cum < u[:, None]).sum(axis=1)
        return np.minimum(ids, p.shape[1] - 1)


# -- finite differences --------------------------------------------------------


def _eval_traced(loss_fn: Callable[[], Tensor], trace: bool):
    global _RELU_TRACE
    if trace:
        _RELU_TRACE = []
    try:
        value = float(loss_fn().data.reshape(-1)[0])
        pattern = _RELU_TRACE
    finally:
        _RELU_TRACE = None
    return value, pattern


def _patterns_match(a, b) -> bool:
    if a is None or b is None:
        return True
    if len(a) != len(b):
        return False
    return all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def finite_difference_check(loss_fn: Callable[[], Tensor],
                            params: Parameters | dict | list,
                            epsilon: float = 1e-3,
                            skip_kinks: bool = True) -> float:
    """Max relative error between analytic gradients and central differences.

    `loss_fn` must rebuild the forward graph from the current parameter values
    and return a scalar Tensor. Every entry of every parameter is perturbed by
    +/- epsilon; the relative error is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-8). With `skip_kinks`, entries whose
    perturbation flips any relu activation pattern are excluded — central
    differences are invalid across the kink.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if isinstance(params, Parameters):
        items = list(params.items())
    elif isinstance(params, dict):
        items = list(params.items())
    else:
        items = [(t.name or f"p{i}", t) for i, t in enumerate(params)]

    for _, t in items:
        t.grad = None
    out = loss_fn()
    if out.data.size != 1:
        raise ShapeError(f"finite_difference_check: loss must be scalar, got {out.data.shape}")
    out.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in items}

    max_rel = 0.0
    for name, t in items:
        flat = t.data.reshape(-1)
        an_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi, pat_hi = _eval_traced(loss_fn, skip_kinks)
            flat[i] = orig - epsilon
            lo, pat_lo = _eval_traced(loss_fn, skip_kinks)
            flat[i] = orig
            if skip_kinks and not _patterns_match(pat_hi, pat_lo):
                continue
            numeric = (hi - lo) / (2.0 * epsilon)
            an = float(an_flat[i])
            rel = abs(an - numeric) / max(abs(an), abs(numeric), 1e-8)
            if rel > max_rel:
                max_rel = rel
    return float(max_rel)
