"""Layer specifications, parameter sets, losses and weight regularization.

A network is a list of :class:`LayerNode` (a :class:`LayerSpec` plus the ids
of the nodes it reads). Shapes are per sample, without the batch axis.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, LabelError, ShapeError
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    avg_pool2d,
    batchnorm,
    concat,
    conv2d,
    dense,
    dropout,
    flatten,
    global_avg_pool,
    l2_normalize,
    maxpool2d,
    relu,
    sigmoid,
    softmax,
)


LAYER_KINDS = (
    "input",
    "conv",
    "maxpool",
    "avgpool",
    "dense",
    "batchnorm",
    "dropout",
    "gap",
    "l2norm",
    "concat",
    "flatten",
    "activation",
)
ACTIVATIONS = ("linear", "relu", "sigmoid", "softmax")
PADDINGS = ("valid", "same")
PROBABILITY_CLAMP = 1e-7
DEFAULT_L2_LAMBDA = 0.001

Shape = tuple[int, ...]


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    kernel: int = 0
    stride: int = 0
    padding: str = "valid"
    units: int = 0
    window: int = 0
    rate: float = 0.0
    activation: str = "linear"
    regularized: bool = False
    trainable: bool = True

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind: {self.kind}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation: {self.activation}")
        if self.padding not in PADDINGS:
            raise ConfigError(f"unknown padding: {self.padding}")
        if self.stride < 0:
            raise ConfigError(f"{self.kind}: stride must be positive")
        if self.kind == "conv" and (self.filters < 1 or self.kernel < 1):
            raise ConfigError(f"conv needs positive filters and kernel, got {self.filters}, {self.kernel}")
        if self.kind == "dense" and self.units < 1:
            raise ConfigError(f"dense needs positive units, got {self.units}")
        if self.kind in ("maxpool", "avgpool") and self.window < 1:
            raise ConfigError(f"{self.kind} needs a positive window, got {self.window}")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")

    @property
    def effective_stride(self) -> int:
        if self.stride:
            return self.stride
        return self.window if self.kind in ("maxpool", "avgpool") else 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LayerNode:
    node_id: str
    spec: LayerSpec
    inputs: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"node_id": self.node_id, "spec": self.spec.to_dict(), "inputs": list(self.inputs)}


def chain(specs: Sequence[LayerSpec | LayerNode]) -> list[LayerNode]:
    """Turn a plain layer list into nodes that each read the previous one."""
    nodes: list[LayerNode] = []
    for index, item in enumerate(specs):
        if isinstance(item, LayerNode):
            nodes.append(item)
            continue
        inputs = (nodes[-1].node_id,) if nodes else ()
        nodes.append(LayerNode(node_id=f"{index:02d}_{item.kind}", spec=item, inputs=inputs))
    return nodes


# ---- shape inference ----


def _spatial(extent: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-extent // stride)
    return (extent - kernel) // stride + 1


def output_shape(spec: LayerSpec, input_shapes: Sequence[Shape]) -> Shape:
    """Per-sample output shape of *spec* applied to *input_shapes*."""
    if spec.kind == "concat":
        if len(input_shapes) < 2:
            raise ConfigError("concat needs at least 2 inputs")
        leading = {shape[:-1] for shape in input_shapes}
        if len(leading) != 1:
            raise ConfigError(f"concat inputs disagree outside the last axis: {list(input_shapes)}")
        return input_shapes[0][:-1] + (sum(shape[-1] for shape in input_shapes),)
    if len(input_shapes) != 1:
        raise ConfigError(f"{spec.kind} takes exactly one input, got {len(input_shapes)}")
    shape = tuple(input_shapes[0])
    kind = spec.kind
    if kind in ("conv", "maxpool", "avgpool"):
        if len(shape) != 3:
            raise ConfigError(f"{kind} needs an H×W×C input, got {shape}")
        h, w, c = shape
        size = spec.kernel if kind == "conv" else spec.window
        padding = spec.padding if kind == "conv" else "valid"
        out_h = _spatial(h, size, spec.effective_stride, padding)
        out_w = _spatial(w, size, spec.effective_stride, padding)
        if out_h < 1 or out_w < 1:
            raise ConfigError(f"{kind} {size}×{size} underflows spatial extent {h}×{w}")
        return (out_h, out_w, spec.filters if kind == "conv" else c)
    if kind == "dense":
        if len(shape) != 1:
            raise ConfigError(f"dense needs a flat input, got {shape}")
        return (spec.units,)
    if kind == "gap":
        if len(shape) != 3:
            raise ConfigError(f"gap needs an H×W×C input, got {shape}")
        return (shape[2],)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    return shape


def infer_shapes(nodes: Sequence[LayerNode], input_shape: Shape) -> dict[str, Shape]:
    shapes: dict[str, Shape] = {}
    for node in nodes:
        if node.node_id in shapes:
            raise ConfigError(f"duplicate layer id: {node.node_id}")
        if node.spec.kind == "input":
            shapes[node.node_id] = tuple(input_shape)
            continue
        for source in node.inputs:
            if source not in shapes:
                raise ConfigError(f"{node.node_id}: input {source} is not defined before it")
        sources = [shapes[source] for source in node.inputs] or [tuple(input_shape)]
        shapes[node.node_id] = output_shape(node.spec, sources)
    return shapes


# ---- parameters ----


class ParamSet:
    """Named tensors owned by layers (``<node>/kernel``, ``<node>/gamma``, ...)."""

    def __init__(self) -> None:
        self._tensors: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}
        self._regularized: set[str] = set()

    def add(self, name: str, tensor: Tensor, trainable: bool = True, regularized: bool = False) -> Tensor:
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name: {name}")
        tensor.requires_grad = bool(trainable)
        self._tensors[name] = tensor
        self._trainable[name] = bool(trainable)
        if regularized:
            self._regularized.add(name)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: object) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._tensors.items())

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        self._trainable[name] = bool(flag)
        self._tensors[name].requires_grad = bool(flag)

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(name, tensor) for name, tensor in self._tensors.items() if self._trainable[name]]

    def regularized(self) -> list[Tensor]:
        return [tensor for name, tensor in self._tensors.items() if name in self._regularized]

    def count(self, trainable_only: bool = False) -> int:
        return sum(
            tensor.size
            for name, tensor in self._tensors.items()
            if not trainable_only or self._trainable[name]
        )

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self._tensors.items()}

    def restore(self, snapshot: Mapping[str, np.ndarray]) -> None:
        for name, data in snapshot.items():
            self._tensors[name].data = data.copy()

    def astype(self, dtype: object) -> "ParamSet":
        converted = ParamSet()
        for name, tensor in self._tensors.items():
            converted.add(
                name,
                Tensor(tensor.data.astype(dtype)),
                trainable=self._trainable[name],
                regularized=name in self._regularized,
            )
        return converted


def _glorot(rng: np.random.Generator, shape: Shape, fan_in: int, fan_out: int, dtype: object) -> Tensor:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype))


def init_params(
    layers: Sequence[LayerSpec | LayerNode],
    input_shape: Shape,
    seed: int,
    dtype: object = DEFAULT_DTYPE,
) -> ParamSet:
    """Glorot-uniform kernels, zero biases, unit gamma, zero beta.

    Conv fans are ``k*k*cin`` and ``k*k*filters``. Draws happen in layer order
    from one generator, so the result depends only on *seed* and the layers.
    """
    nodes = chain(layers)
    shapes = infer_shapes(nodes, input_shape)
    rng = np.random.default_rng(seed)
    params = ParamSet()
    for node in nodes:
        spec = node.spec
        source = shapes[node.inputs[0]] if node.inputs else tuple(input_shape)
        name = node.node_id
        if spec.kind == "conv":
            cin = source[-1]
            k = spec.kernel
            params.add(
                f"{name}/kernel",
                _glorot(rng, (k, k, cin, spec.filters), k * k * cin, k * k * spec.filters, dtype),
                trainable=spec.trainable,
                regularized=spec.regularized,
            )
            params.add(f"{name}/bias", Tensor(np.zeros(spec.filters, dtype=dtype)), trainable=spec.trainable)
        elif spec.kind == "dense":
            fan_in = source[-1]
            params.add(
                f"{name}/kernel",
                _glorot(rng, (fan_in, spec.units), fan_in, spec.units, dtype),
                trainable=spec.trainable,
                regularized=spec.regularized,
            )
            params.add(f"{name}/bias", Tensor(np.zeros(spec.units, dtype=dtype)), trainable=spec.trainable)
        elif spec.kind == "batchnorm":
            features = source[-1]
            params.add(f"{name}/gamma", Tensor(np.ones(features, dtype=dtype)), trainable=spec.trainable)
            params.add(f"{name}/beta", Tensor(np.zeros(features, dtype=dtype)), trainable=spec.trainable)
            params.add(f"{name}/moving_mean", Tensor(np.zeros(features, dtype=dtype)), trainable=False)
            params.add(f"{name}/moving_variance", Tensor(np.ones(features, dtype=dtype)), trainable=False)
    return params


# ---- forward execution of one layer ----


def activate(x: Tensor, name: str) -> Tensor:
    if name == "relu":
        return relu(x)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "softmax":
        return softmax(x, axis=-1)
    return x


def forward_layer(
    node: LayerNode,
    inputs: Sequence[Tensor],
    params: ParamSet,
    training: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    spec = node.spec
    name = node.node_id
    kind = spec.kind
    if kind == "concat":
        return concat(list(inputs), axis=-1)
    x = inputs[0]
    if kind == "input":
        return x
    if kind == "conv":
        out = conv2d(
            x,
            params[f"{name}/kernel"],
            params[f"{name}/bias"],
            stride=spec.effective_stride,
            padding=spec.padding,
        )
        return activate(out, spec.activation)
    if kind == "dense":
        return activate(dense(x, params[f"{name}/kernel"], params[f"{name}/bias"]), spec.activation)
    if kind == "maxpool":
        return maxpool2d(x, spec.window, spec.effective_stride)
    if kind == "avgpool":
        return avg_pool2d(x, spec.window, spec.effective_stride)
    if kind == "batchnorm":
        # Frozen batchnorm layers always use their running statistics.
        return batchnorm(
            x,
            params[f"{name}/gamma"],
            params[f"{name}/beta"],
            params[f"{name}/moving_mean"].data,
            params[f"{name}/moving_variance"].data,
            training=training and params.is_trainable(f"{name}/gamma"),
        )
    if kind == "dropout":
        return dropout(x, spec.rate, rng, training)
    if kind == "gap":
        return global_avg_pool(x)
    if kind == "l2norm":
        return l2_normalize(x, axis=-1)
    if kind == "flatten":
        return flatten(x)
    if kind == "activation":
        return activate(x, spec.activation)
    raise ConfigError(f"unknown layer kind: {kind}")


# ---- losses ----


def one_hot(labels: Sequence[int] | np.ndarray, num_classes: int, dtype: object = DEFAULT_DTYPE) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1.0
    return out


def binary_crossentropy(p: Tensor, y: Sequence[float] | np.ndarray) -> Tensor:
    """Batch mean of ``-[y ln p + (1-y) ln(1-p)]`` with p clamped to [1e-7, 1-1e-7]."""
    targets = np.asarray(y, dtype=p.data.dtype)
    if targets.size != p.size:
        raise ShapeError(f"binary_crossentropy: {targets.size} targets for {p.size} probabilities")
    if np.any((targets != 0) & (targets != 1)):
        raise LabelError("binary_crossentropy targets must be 0 or 1")
    t = Tensor(targets.reshape(p.shape))
    q = p.clip(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    losses = -(t * q.log() + (1.0 - t) * (1.0 - q).log())
    return losses.mean()


def categorical_crossentropy(q: Tensor, y: np.ndarray) -> Tensor:
    """Batch mean of ``-ln q[true class]`` for one-hot targets *y*."""
    targets = np.asarray(y, dtype=q.data.dtype)
    if targets.shape != q.shape:
        raise ShapeError(f"categorical_crossentropy: targets {targets.shape} vs probabilities {q.shape}")
    is_binary = np.all((targets == 0) | (targets == 1))
    if not is_binary or not np.all(targets.sum(axis=-1) == 1):
        raise LabelError("categorical_crossentropy targets must be one-hot rows")
    clamped = q.clip(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    per_sample = (Tensor(targets) * clamped.log()).sum(axis=-1)
    return -per_sample.mean()


def l2_penalty(params: ParamSet, lam: float = DEFAULT_L2_LAMBDA) -> Tensor:
    """``lam * sum(w**2)`` over regularized kernels; biases never count."""
    if lam < 0:
        raise ConfigError(f"l2 lambda must be >= 0, got {lam}")
    weights = params.regularized()
    if lam == 0 or not weights:
        return Tensor(np.asarray(0.0, dtype=DEFAULT_DTYPE))
    total = (weights[0] * weights[0]).sum()
    for w in weights[1:]:
        total = total + (w * w).sum()
    return total * lam


LOSSES = {
    "binary_crossentropy": binary_crossentropy,
    "categorical_crossentropy": categorical_crossentropy,
}


def get_loss(name: str):
    key = str(name or "").strip()
    if key not in LOSSES:
        raise KeyError(f"Unknown loss: {name}")
    return LOSSES[key]


__all__ = [
    "ACTIVATIONS",
    "LAYER_KINDS",
    "LayerNode",
    "LayerSpec",
    "ParamSet",
    "activate",
    "binary_crossentropy",
    "categorical_crossentropy",
    "chain",
    "forward_layer",
    "get_loss",
    "infer_shapes",
    "init_params",
    "l2_penalty",
    "one_hot",
    "output_shape",
]
