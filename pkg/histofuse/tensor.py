"""Dense tensors, primitive kernels and reverse-mode differentiation.

Feature maps are NHWC (batch, height, width, channels). Every spatial op also
accepts a single unbatched H×W×C map and returns an unbatched result.

Differentiation is tape based: operations executed while a :class:`Tape` is
active on the current thread, and that touch at least one tensor with
``requires_grad``, are appended to the tape in execution order. That order is
topological, so :func:`backward` replays it reversed and visits every node
exactly once. Outside a tape nothing is recorded (inference).

Public API:

- :class:`Tensor`, :class:`Tape`, :func:`backward`
- kernels: :func:`conv2d`, :func:`maxpool2d`, :func:`avg_pool2d`,
  :func:`global_avg_pool`, :func:`dense`, :func:`flatten`, :func:`concat`
- activations: :func:`relu`, :func:`sigmoid`, :func:`softmax`
- normalization/regularization: :func:`l2_normalize`, :func:`batchnorm`,
  :func:`dropout`
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError, ShapeError


DEFAULT_DTYPE = np.float32
L2_EPSILON = 1e-12
BATCHNORM_EPSILON = 1e-3
BATCHNORM_MOMENTUM = 0.99

_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_tensor(value: Any, like: "Tensor") -> "Tensor":
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Tensor and tape
# ---------------------------------------------------------------------------


class Tensor:
    """Shape-tagged real array with an optional accumulated gradient."""

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None) -> None:
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = array
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    # arithmetic

    def __add__(self, other: Any) -> "Tensor":
        return Add.apply(self, _as_tensor(other, self))

    def __radd__(self, other: Any) -> "Tensor":
        return Add.apply(_as_tensor(other, self), self)

    def __sub__(self, other: Any) -> "Tensor":
        return Sub.apply(self, _as_tensor(other, self))

    def __rsub__(self, other: Any) -> "Tensor":
        return Sub.apply(_as_tensor(other, self), self)

    def __mul__(self, other: Any) -> "Tensor":
        return Mul.apply(self, _as_tensor(other, self))

    def __rmul__(self, other: Any) -> "Tensor":
        return Mul.apply(_as_tensor(other, self), self)

    def __truediv__(self, other: Any) -> "Tensor":
        return Div.apply(self, _as_tensor(other, self))

    def __neg__(self) -> "Tensor":
        return Mul.apply(self, Tensor(np.asarray(-1.0, dtype=self.data.dtype)))

    def __pow__(self, exponent: float) -> "Tensor":
        return PowScalar.apply(self, exponent=float(exponent))

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def log(self) -> "Tensor":
        return Log.apply(self)

    def clip(self, lower: float, upper: float) -> "Tensor":
        return Clip.apply(self, lower=float(lower), upper=float(upper))


@dataclass
class Node:
    function: "Function"
    inputs: tuple[Tensor, ...]
    output: Tensor


class Tape:
    """Execution record of differentiable operations for one forward pass.

    Usage::

        with Tape() as tape:
            loss = model.loss(batch)
        backward(tape, loss, params)
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
        backward(self, loss, params)


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    Tensors in *params* that the loss does not reach get an all-zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        out_grad = node.output.grad
        if out_grad is None:
            continue
        grads = node.function.backward(out_grad)
        for tensor, grad in zip(node.inputs, grads):
            if grad is None or not tensor.requires_grad:
                continue
            grad = _unbroadcast(np.asarray(grad), tensor.shape).astype(tensor.data.dtype, copy=False)
            if tensor.grad is None:
                tensor.grad = np.array(grad, copy=True)
            else:
                tensor.grad = tensor.grad + grad
    for param in params:
        if param.grad is None:
            param.grad = np.zeros_like(param.data)


class Function:
    """One differentiable primitive; instances hold what backward needs."""

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        function = cls()
        out_data = function.forward(*(tensor.data for tensor in inputs), **kwargs)
        tape = _active_tape()
        tracked = tape is not None and any(tensor.requires_grad for tensor in inputs)
        out = Tensor(out_data, requires_grad=tracked, dtype=out_data.dtype)
        if tracked:
            tape.record(Node(function=function, inputs=tuple(inputs), output=out))
        return out


# ---------------------------------------------------------------------------
# Elementwise and reduction primitives
# ---------------------------------------------------------------------------


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, grad


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, -grad


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad * self.b, grad * self.a


class Div(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a / b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad / self.b, -grad * self.a / (self.b * self.b)


class PowScalar(Function):
    def forward(self, a: np.ndarray, exponent: float) -> np.ndarray:
        self.a, self.exponent = a, exponent
        return np.power(a, exponent).astype(a.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.exponent * np.power(self.a, self.exponent - 1.0),)


class Log(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.a = a
        return np.log(a)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad / self.a,)


class Clip(Function):
    def forward(self, a: np.ndarray, lower: float, upper: float) -> np.ndarray:
        self.mask = (a >= lower) & (a <= upper)
        return np.clip(a, lower, upper).astype(a.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


def _normalize_axes(axis: int | tuple[int, ...] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(a % ndim for a in axes))


class Sum(Function):
    def forward(self, a: np.ndarray, axis: Any, keepdims: bool) -> np.ndarray:
        self.shape = a.shape
        self.axes = _normalize_axes(axis, a.ndim)
        self.keepdims = keepdims
        return np.asarray(a.sum(axis=self.axes, keepdims=keepdims), dtype=a.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        if not self.keepdims:
            for axis in self.axes:
                grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, self.shape),)


class Mean(Function):
    def forward(self, a: np.ndarray, axis: Any, keepdims: bool) -> np.ndarray:
        self.shape = a.shape
        self.axes = _normalize_axes(axis, a.ndim)
        self.keepdims = keepdims
        self.count = int(np.prod([a.shape[i] for i in self.axes])) if self.axes else 1
        return np.asarray(a.mean(axis=self.axes, keepdims=keepdims), dtype=a.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        if not self.keepdims:
            for axis in self.axes:
                grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad / self.count, self.shape),)


class Reshape(Function):
    def forward(self, a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.shape),)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, np.zeros_like(x))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        e = np.exp(-np.abs(x))
        self.out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.out * (1.0 - self.out),)


class Softmax(Function):
    def forward(self, x: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Probabilities along *axis*, computed on max-shifted logits."""
    if x.shape[axis] < 1:
        raise ShapeError("softmax needs at least one logit")
    return Softmax.apply(x, axis=axis)


# ---------------------------------------------------------------------------
# Dense, flatten, concat, normalization
# ---------------------------------------------------------------------------


class Dense(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.x, self.w = x, w
        return x @ w + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        gx = grad @ self.w.T
        if self.x.ndim == 1:
            gw = np.outer(self.x, grad)
            gb = grad
        else:
            gw = self.x.T @ grad
            gb = grad.sum(axis=0)
        return gx, gw, gb


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """``x @ weights + bias`` for a vector or a batch of row vectors."""
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeError(
            f"dense shape mismatch: x {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    return Dense.apply(x, weights, bias)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the batch axis."""
    return x.reshape(x.shape[0], -1)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, ...]:
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if len(tensors) < 2:
        raise ShapeError(f"concat needs at least 2 inputs, got {len(tensors)}")
    ranks = {t.ndim for t in tensors}
    if len(ranks) != 1:
        raise ShapeError(f"concat inputs differ in rank: {[t.shape for t in tensors]}")
    return Concat.apply(*tensors, axis=axis)


class L2Normalize(Function):
    def forward(self, x: np.ndarray, axis: int, eps: float) -> np.ndarray:
        self.axis = axis
        norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
        self.active = norm > eps
        self.denom = np.maximum(norm, eps).astype(x.dtype, copy=False)
        self.out = x / self.denom
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        projected = np.where(self.active, grad - self.out * inner, grad)
        return (projected / self.denom,)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = L2_EPSILON) -> Tensor:
    """``x / max(||x||_2, eps)`` along *axis*; zero vectors stay zero."""
    return L2Normalize.apply(x, axis=axis, eps=eps)


class BatchNorm(Function):
    def forward(
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        training: bool,
        momentum: float,
        eps: float,
    ) -> np.ndarray:
        self.axes = tuple(range(x.ndim - 1))
        self.gamma = gamma
        self.training = training
        if training:
            count = int(np.prod([x.shape[a] for a in self.axes]))
            if count < 2:
                raise ShapeError("batchnorm in train mode needs at least 2 samples per feature")
            mean = x.mean(axis=self.axes)
            var = x.var(axis=self.axes)
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mean
            running_var *= momentum
            running_var += (1.0 - momentum) * var * (count / (count - 1))
            self.count = count
        else:
            mean, var = running_mean, running_var
        self.inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
        self.xhat = (x - mean) * self.inv_std
        return self.xhat * gamma + beta

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ggamma = (grad * self.xhat).sum(axis=self.axes)
        gbeta = grad.sum(axis=self.axes)
        dxhat = grad * self.gamma
        if self.training:
            m = self.count
            gx = (self.inv_std / m) * (
                m * dxhat
                - dxhat.sum(axis=self.axes)
                - self.xhat * (dxhat * self.xhat).sum(axis=self.axes)
            )
        else:
            gx = dxhat * self.inv_std
        return gx, ggamma, gbeta


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BATCHNORM_MOMENTUM,
    eps: float = BATCHNORM_EPSILON,
) -> Tensor:
    """Normalize over every axis but the last (feature/channel) axis.

    In train mode the batch statistics are used (biased variance) and the
    running statistics are updated in place; the running variance takes the
    unbiased estimate. In infer mode the running statistics are used.
    """
    if gamma.shape != (x.shape[-1],) or beta.shape != gamma.shape:
        raise ShapeError(f"batchnorm parameter shape {gamma.shape} does not match features {x.shape[-1]}")
    return BatchNorm.apply(
        x,
        gamma,
        beta,
        running_mean=running_mean,
        running_var=running_var,
        training=bool(training),
        momentum=float(momentum),
        eps=float(eps),
    )


class Dropout(Function):
    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        self.mask = mask
        return x * mask

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)``; infer mode returns *x* itself."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode needs a random generator")
    keep = rng.random(x.shape) >= p
    mask = (keep / (1.0 - p)).astype(x.data.dtype)
    return Dropout.apply(x, mask=mask)


# ---------------------------------------------------------------------------
# Spatial kernels (NHWC)
# ---------------------------------------------------------------------------


def _pair(value: int | Sequence[int]) -> tuple[int, int]:
    if isinstance(value, (int, np.integer)):
        return int(value), int(value)
    first, second = value
    return int(first), int(second)


def _windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Strided view of shape (N, H', W', kh, kw, C) over a padded NHWC array."""
    n, h, w, c = x.shape
    out_h = (h - kh) // sh + 1
    out_w = (w - kw) // sw + 1
    s_n, s_h, s_w, s_c = x.strides
    return as_strided(
        x,
        shape=(n, out_h, out_w, kh, kw, c),
        strides=(s_n, sh * s_h, sw * s_w, s_h, s_w, s_c),
        writeable=False,
    )


def _same_padding(extent: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    return total // 2, total - total // 2


class Conv2D(Function):
    def forward(
        self,
        x: np.ndarray,
        kernels: np.ndarray,
        bias: np.ndarray,
        stride: int,
        pads: tuple[tuple[int, int], tuple[int, int]],
    ) -> np.ndarray:
        self.batched = x.ndim == 4
        if not self.batched:
            x = x[None]
        (top, bottom), (left, right) = pads
        if top or bottom or left or right:
            x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
        self.pads = pads
        self.padded_shape = x.shape
        self.stride = stride
        self.kernels = kernels
        kh, kw = kernels.shape[:2]
        self.windows = _windows(np.ascontiguousarray(x), kh, kw, stride, stride)
        out = np.tensordot(self.windows, kernels, axes=([3, 4, 5], [0, 1, 2])) + bias
        return out if self.batched else out[0]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.batched:
            grad = grad[None]
        s = self.stride
        kh, kw = self.kernels.shape[:2]
        out_h, out_w = grad.shape[1:3]
        gk = np.tensordot(self.windows, grad, axes=([0, 1, 2], [0, 1, 2]))
        gb = grad.sum(axis=(0, 1, 2))
        gx = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                gx[:, i : i + s * (out_h - 1) + 1 : s, j : j + s * (out_w - 1) + 1 : s, :] += (
                    grad @ self.kernels[i, j].T
                )
        (top, bottom), (left, right) = self.pads
        gx = gx[:, top : gx.shape[1] - bottom, left : gx.shape[2] - right, :]
        return (gx if self.batched else gx[0]), gk, gb


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: str = "valid",
) -> Tensor:
    """2-D cross-correlation of an NHWC map with Kh×Kw×Cin×Cout kernels.

    ``valid`` padding gives ``H' = floor((H - Kh) / stride) + 1``; ``same``
    zero-pads so that ``H' = ceil(H / stride)``.
    """
    if x.ndim not in (3, 4) or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects H×W×C or N×H×W×C input and 4-D kernels, got {x.shape}, {kernels.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    h, w, c = x.shape[-3:]
    kh, kw, cin, cout = kernels.shape
    if cin != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernels expect {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {cout} kernels")
    if padding == "valid":
        pads = ((0, 0), (0, 0))
    elif padding == "same":
        pads = (_same_padding(h, kh, stride), _same_padding(w, kw, stride))
    else:
        raise ConfigError(f"unknown padding: {padding}")
    if kh > h + sum(pads[0]) or kw > w + sum(pads[1]):
        raise ShapeError(f"conv2d kernel {kh}×{kw} larger than input {h}×{w}")
    return Conv2D.apply(x, kernels, bias, stride=int(stride), pads=pads)


class MaxPool2D(Function):
    def forward(self, x: np.ndarray, window: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
        self.batched = x.ndim == 4
        if not self.batched:
            x = x[None]
        self.input_shape = x.shape
        self.window, self.stride = window, stride
        view = _windows(np.ascontiguousarray(x), window[0], window[1], stride[0], stride[1])
        n, out_h, out_w, wh, ww, c = view.shape
        flat = view.reshape(n, out_h, out_w, wh * ww, c)
        self.argmax = flat.argmax(axis=3)
        out = np.take_along_axis(flat, self.argmax[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        return out if self.batched else out[0]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        if not self.batched:
            grad = grad[None]
        (wh, ww), (sh, sw) = self.window, self.stride
        out_h, out_w = grad.shape[1:3]
        gx = np.zeros(self.input_shape, dtype=grad.dtype)
        for i in range(wh):
            for j in range(ww):
                hit = self.argmax == i * ww + j
                gx[:, i : i + sh * (out_h - 1) + 1 : sh, j : j + sw * (out_w - 1) + 1 : sw, :] += grad * hit
        return (gx if self.batched else gx[0],)


class AvgPool2D(Function):
    def forward(self, x: np.ndarray, window: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
        self.batched = x.ndim == 4
        if not self.batched:
            x = x[None]
        self.input_shape = x.shape
        self.window, self.stride = window, stride
        view = _windows(np.ascontiguousarray(x), window[0], window[1], stride[0], stride[1])
        out = view.mean(axis=(3, 4)).astype(x.dtype, copy=False)
        return out if self.batched else out[0]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        if not self.batched:
            grad = grad[None]
        (wh, ww), (sh, sw) = self.window, self.stride
        out_h, out_w = grad.shape[1:3]
        share = grad / (wh * ww)
        gx = np.zeros(self.input_shape, dtype=grad.dtype)
        for i in range(wh):
            for j in range(ww):
                gx[:, i : i + sh * (out_h - 1) + 1 : sh, j : j + sw * (out_w - 1) + 1 : sw, :] += share
        return (gx if self.batched else gx[0],)


def _check_pool(x: Tensor, window: tuple[int, int], stride: tuple[int, int], name: str) -> None:
    if x.ndim not in (3, 4):
        raise ShapeError(f"{name} expects H×W×C or N×H×W×C input, got {x.shape}")
    h, w = x.shape[-3:-1]
    if min(window) < 1 or min(stride) < 1:
        raise ShapeError(f"{name} window and stride must be positive, got {window}, {stride}")
    if window[0] > h or window[1] > w:
        raise ShapeError(f"{name} window {window} exceeds input extent {h}×{w}")


def maxpool2d(
    x: Tensor,
    window: int | Sequence[int] = 2,
    stride: int | Sequence[int] | None = None,
) -> Tensor:
    """Window maximum; the argmax of each window routes the gradient (first max on ties)."""
    window = _pair(window)
    stride = window if stride is None else _pair(stride)
    _check_pool(x, window, stride, "maxpool2d")
    return MaxPool2D.apply(x, window=window, stride=stride)


def avg_pool2d(
    x: Tensor,
    window: int | Sequence[int] = 2,
    stride: int | Sequence[int] | None = None,
) -> Tensor:
    window = _pair(window)
    stride = window if stride is None else _pair(stride)
    _check_pool(x, window, stride, "avg_pool2d")
    return AvgPool2D.apply(x, window=window, stride=stride)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: N×H×W×C -> N×C (or H×W×C -> C)."""
    if x.ndim not in (3, 4) or min(x.shape[-3:-1]) < 1:
        raise ShapeError(f"global_avg_pool expects a non-empty H×W×C map, got {x.shape}")
    return x.mean(axis=(-3, -2))
