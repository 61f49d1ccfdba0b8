"""Architectures, weight files and two-stage (binary -> subtype) prediction.

Model kinds:

- ``baseline``: three conv/pool stages, dense 256, sigmoid output.
- ``pso_binary``: dense-connectivity backbone, GAP on the deepest tap,
  dropout, sigmoid output (the network whose validation loss PSO minimizes).
- ``fusion_binary`` / ``fusion_benign`` / ``fusion_malignant``: three backbone
  taps, each GAP -> L2 normalize -> dense 64 -> batchnorm, concatenated to
  192 features, dense 16, dropout 0.45, softmax.
- ``subclass_initial``: 32/64/128 conv stages with dropout, dense 512,
  4-way softmax.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np

from .data import DEFAULT_RESCALE, TASK_LABELS
from .errors import ConfigError, ShapeError, TaxonomyError, WeightsFormatError
from .layers import (
    LayerNode,
    LayerSpec,
    ParamSet,
    binary_crossentropy,
    categorical_crossentropy,
    forward_layer,
    infer_shapes,
    init_params,
    one_hot,
)
from .tensor import Tensor


logger = logging.getLogger(__name__)

MODEL_KINDS = ("baseline", "pso_binary", "fusion_binary", "fusion_benign", "fusion_malignant", "subclass_initial")
MODEL_CARD_SCHEMA_VERSION = "histofuse_model_card_v1"
DIAGNOSIS_SCHEMA_VERSION = "histofuse_diagnosis_v1"
WEIGHTS_MAGIC = b"HFW1"
WEIGHTS_VERSION = 1
FUSION_HEAD_UNITS = 64
FUSION_DENSE_UNITS = 16
FUSION_DROPOUT = 0.45
FUSION_L2 = 0.001

BINARY_LABELS = TASK_LABELS["binary"]
BENIGN_LABELS = TASK_LABELS["benign"]
MALIGNANT_LABELS = TASK_LABELS["malignant"]


@dataclass(frozen=True)
class BackboneConfig:
    stem_filters: int = 16
    layers_per_block: int = 4
    growth_rate: int = 12
    compression: float = 0.5
    dense_connectivity: bool = True
    frozen: bool = False

    def __post_init__(self) -> None:
        if self.stem_filters < 1 or self.layers_per_block < 1 or self.growth_rate < 1:
            raise ConfigError("backbone stem_filters, layers_per_block and growth_rate must be positive")
        if not 0.0 < self.compression <= 1.0:
            raise ConfigError(f"backbone compression must be in (0, 1], got {self.compression}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any] | None) -> "BackboneConfig":
        return cls(**dict(payload or {}))


def tap_channels(config: BackboneConfig) -> list[int]:
    """Closed-form channel widths of the three taps."""
    channels = config.stem_filters
    widths = []
    for stage in range(3):
        if config.dense_connectivity:
            out = channels + config.layers_per_block * config.growth_rate
        else:
            out = config.growth_rate
        widths.append(out)
        if stage < 2:
            channels = max(1, int(out * config.compression))
    return widths


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------


class ModelGraph:
    """Executable layer DAG with parameters, tap points and class labels."""

    def __init__(
        self,
        kind: str,
        nodes: Sequence[LayerNode],
        input_shape: Sequence[int],
        output_id: str,
        class_labels: Sequence[str],
        loss_name: str,
        taps: Sequence[str] = (),
        l2_lambda: float = 0.0,
        build_args: Mapping[str, Any] | None = None,
        seed: int = 0,
    ) -> None:
        self.kind = kind
        self.nodes = list(nodes)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.output_id = output_id
        self.class_labels = tuple(class_labels)
        self.loss_name = loss_name
        self.taps = tuple(taps)
        self.l2_lambda = float(l2_lambda)
        self.build_args = dict(build_args or {})
        # Pixel scale the weights were trained with; recorded in the model card.
        self.rescale = DEFAULT_RESCALE
        self.shapes = infer_shapes(self.nodes, self.input_shape)
        for tap in self.taps:
            if tap not in self.shapes:
                raise ConfigError(f"tap {tap} is not a layer of {kind}")
        if output_id not in self.shapes:
            raise ConfigError(f"output {output_id} is not a layer of {kind}")
        if loss_name:
            width = self.shapes[output_id][-1]
            expected = 1 if loss_name == "binary_crossentropy" else len(self.class_labels)
            if width != expected:
                raise ConfigError(f"{kind}: output width {width} does not match {expected}")
        self.params: ParamSet = init_params(self.nodes, self.input_shape, seed)

    @property
    def num_classes(self) -> int:
        return len(self.class_labels)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[self.output_id]

    def tap_shapes(self) -> list[tuple[int, ...]]:
        return [self.shapes[tap] for tap in self.taps]

    def _run(self, x: Tensor, training: bool, rng: np.random.Generator | None) -> dict[str, Tensor]:
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.kind} expects N×{'×'.join(map(str, self.input_shape))} input, got {x.shape}")
        values: dict[str, Tensor] = {}
        for node in self.nodes:
            inputs = [values[source] for source in node.inputs] if node.inputs else [x]
            values[node.node_id] = forward_layer(node, inputs, self.params, training, rng)
        return values

    def forward(
        self,
        x: Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
        return_taps: bool = False,
    ):
        values = self._run(x, training, rng)
        out = values[self.output_id]
        if return_taps:
            return out, {tap: values[tap] for tap in self.taps}
        return out

    def loss(self, outputs: Tensor, labels: np.ndarray) -> Tensor:
        if self.loss_name == "binary_crossentropy":
            return binary_crossentropy(outputs, np.asarray(labels).reshape(outputs.shape))
        return categorical_crossentropy(outputs, one_hot(labels, self.num_classes, outputs.data.dtype))

    def class_probabilities(self, outputs: np.ndarray) -> np.ndarray:
        if outputs.shape[-1] == 1 and self.num_classes == 2:
            positive = outputs.reshape(-1)
            return np.stack([1.0 - positive, positive], axis=1)
        return outputs

    def predict_proba(self, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        chunks = []
        for start in range(0, len(images), batch_size):
            out = self.forward(Tensor(images[start : start + batch_size]), training=False)
            chunks.append(self.class_probabilities(out.data))
        return np.concatenate(chunks) if chunks else np.zeros((0, self.num_classes), dtype=np.float32)

    def predict_labels(self, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
        return self.predict_proba(images, batch_size).argmax(axis=1)

    def tap_activations(self, images: np.ndarray) -> dict[str, np.ndarray]:
        values = self._run(Tensor(np.asarray(images, dtype=np.float32)), training=False, rng=None)
        return {tap: values[tap].data for tap in self.taps}

    def shape_audit(self, batch: int = 2) -> list[str]:
        """Layers whose forward-propagated shape differs from the declared one."""
        values = self._run(Tensor(np.zeros((batch, *self.input_shape), dtype=np.float32)), training=False, rng=None)
        problems = []
        for node_id, declared in self.shapes.items():
            actual = values[node_id].shape[1:]
            if actual != declared:
                problems.append(f"{node_id}: declared {declared}, forward {actual}")
        return problems

    def parameter_count(self, trainable_only: bool = False) -> int:
        return self.params.count(trainable_only=trainable_only)

    def card(self) -> dict:
        return {
            "schema_version": MODEL_CARD_SCHEMA_VERSION,
            "kind": self.kind,
            "build_args": self.build_args,
            "class_labels": list(self.class_labels),
            "input_shape": list(self.input_shape),
            "loss": self.loss_name,
            "taps": list(self.taps),
            "parameter_count": self.parameter_count(),
            "rescale": self.rescale,
        }


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _node(node_id: str, inputs: Sequence[str], **spec: Any) -> LayerNode:
    return LayerNode(node_id=node_id, spec=LayerSpec(**spec), inputs=tuple(inputs))


def backbone_nodes(config: BackboneConfig) -> tuple[list[LayerNode], list[str]]:
    """Stem, then three dense blocks with a transition between consecutive blocks."""
    trainable = not config.frozen
    nodes = [
        _node("input", (), kind="input"),
        _node("stem_conv", ("input",), kind="conv", filters=config.stem_filters, kernel=3, stride=2,
              activation="relu", trainable=trainable),
        _node("stem_pool", ("stem_conv",), kind="maxpool", window=2),
    ]
    current = "stem_pool"
    channels = config.stem_filters
    taps = []
    for stage in range(1, 4):
        for layer in range(1, config.layers_per_block + 1):
            prefix = f"block{stage}_layer{layer}"
            nodes.append(_node(f"{prefix}_bn", (current,), kind="batchnorm", trainable=trainable))
            nodes.append(_node(f"{prefix}_relu", (f"{prefix}_bn",), kind="activation", activation="relu"))
            nodes.append(_node(f"{prefix}_conv", (f"{prefix}_relu",), kind="conv", filters=config.growth_rate,
                               kernel=3, padding="same", trainable=trainable))
            if config.dense_connectivity:
                nodes.append(_node(f"{prefix}_concat", (current, f"{prefix}_conv"), kind="concat"))
                current = f"{prefix}_concat"
                channels += config.growth_rate
            else:
                current = f"{prefix}_conv"
                channels = config.growth_rate
        taps.append(current)
        if stage < 3:
            prefix = f"transition{stage}"
            channels = max(1, int(channels * config.compression))
            nodes.append(_node(f"{prefix}_bn", (current,), kind="batchnorm", trainable=trainable))
            nodes.append(_node(f"{prefix}_relu", (f"{prefix}_bn",), kind="activation", activation="relu"))
            nodes.append(_node(f"{prefix}_conv", (f"{prefix}_relu",), kind="conv", filters=channels, kernel=1,
                               trainable=trainable))
            nodes.append(_node(f"{prefix}_pool", (f"{prefix}_conv",), kind="avgpool", window=2))
            current = f"{prefix}_pool"
    return nodes, taps


def build_mini_dense_backbone(config: BackboneConfig | None = None, input_size: int = 128, seed: int = 0) -> ModelGraph:
    """The backbone alone; its output is the deepest tap and it carries all three taps."""
    config = config or BackboneConfig()
    nodes, taps = backbone_nodes(config)
    return ModelGraph(
        kind="backbone",
        nodes=nodes,
        input_shape=(input_size, input_size, 3),
        output_id=taps[-1],
        class_labels=(),
        loss_name="",
        taps=taps,
        build_args={"backbone": config.to_dict(), "input_size": input_size},
        seed=seed,
    )


def build_baseline_binary_cnn(
    input_size: int = 128,
    filters: Sequence[int] = (16, 32, 16),
    kernel: int = 4,
    seed: int = 0,
) -> ModelGraph:
    if len(filters) != 3:
        raise ConfigError(f"baseline needs three filter counts, got {list(filters)}")
    nodes = [_node("input", (), kind="input")]
    current = "input"
    for index, count in enumerate(filters, start=1):
        nodes.append(_node(f"conv{index}", (current,), kind="conv", filters=int(count), kernel=kernel, activation="relu"))
        nodes.append(_node(f"pool{index}", (f"conv{index}",), kind="maxpool", window=2))
        current = f"pool{index}"
    nodes += [
        _node("flatten", (current,), kind="flatten"),
        _node("dense", ("flatten",), kind="dense", units=256, activation="relu"),
        _node("output", ("dense",), kind="dense", units=1, activation="sigmoid"),
    ]
    return ModelGraph(
        kind="baseline",
        nodes=nodes,
        input_shape=(input_size, input_size, 3),
        output_id="output",
        class_labels=BINARY_LABELS,
        loss_name="binary_crossentropy",
        build_args={"input_size": input_size, "filters": [int(f) for f in filters], "kernel": kernel},
        seed=seed,
    )


def build_pso_binary_model(
    dropout: float = 0.5,
    backbone: BackboneConfig | None = None,
    input_size: int = 128,
    seed: int = 0,
) -> ModelGraph:
    backbone = backbone or BackboneConfig(frozen=True)
    nodes, taps = backbone_nodes(backbone)
    nodes += [
        _node("gap", (taps[-1],), kind="gap"),
        _node("dropout", ("gap",), kind="dropout", rate=dropout),
        _node("output", ("dropout",), kind="dense", units=1, activation="sigmoid"),
    ]
    return ModelGraph(
        kind="pso_binary",
        nodes=nodes,
        input_shape=(input_size, input_size, 3),
        output_id="output",
        class_labels=BINARY_LABELS,
        loss_name="binary_crossentropy",
        taps=taps,
        build_args={"dropout": dropout, "backbone": backbone.to_dict(), "input_size": input_size},
        seed=seed,
    )


_FUSION_TASKS = {2: "binary", 4: "benign"}


def build_fusion_model(
    num_classes: int = 2,
    backbone: BackboneConfig | None = None,
    input_size: int = 128,
    task: str | None = None,
    dropout: float = FUSION_DROPOUT,
    seed: int = 0,
) -> ModelGraph:
    """Multi-scale fusion classifier over the three backbone taps."""
    if num_classes not in (2, 4):
        raise ConfigError(f"fusion model supports 2 or 4 classes, got {num_classes}")
    task = task or _FUSION_TASKS[num_classes]
    if len(TASK_LABELS.get(task, ())) != num_classes:
        raise ConfigError(f"task {task} does not have {num_classes} classes")
    backbone = backbone or BackboneConfig()
    nodes, taps = backbone_nodes(backbone)
    heads = []
    for index, tap in enumerate(taps, start=1):
        prefix = f"head{index}"
        nodes += [
            _node(f"{prefix}_gap", (tap,), kind="gap"),
            _node(f"{prefix}_l2", (f"{prefix}_gap",), kind="l2norm"),
            _node(f"{prefix}_dense", (f"{prefix}_l2",), kind="dense", units=FUSION_HEAD_UNITS, activation="relu",
                  regularized=True),
            _node(f"{prefix}_bn", (f"{prefix}_dense",), kind="batchnorm"),
        ]
        heads.append(f"{prefix}_bn")
    nodes += [
        _node("fusion_concat", heads, kind="concat"),
        _node("fusion_dense", ("fusion_concat",), kind="dense", units=FUSION_DENSE_UNITS, activation="relu",
              regularized=True),
        _node("fusion_dropout", ("fusion_dense",), kind="dropout", rate=dropout),
        _node("output", ("fusion_dropout",), kind="dense", units=num_classes, activation="softmax"),
    ]
    return ModelGraph(
        kind=f"fusion_{task}",
        nodes=nodes,
        input_shape=(input_size, input_size, 3),
        output_id="output",
        class_labels=TASK_LABELS[task],
        loss_name="categorical_crossentropy",
        taps=taps,
        l2_lambda=FUSION_L2,
        build_args={
            "num_classes": num_classes,
            "backbone": backbone.to_dict(),
            "input_size": input_size,
            "task": task,
            "dropout": dropout,
        },
        seed=seed,
    )


def build_subclass_initial_cnn(input_size: int = 256, task: str = "benign", seed: int = 0) -> ModelGraph:
    if task not in ("benign", "malignant"):
        raise ConfigError(f"subclass task must be benign or malignant, got {task}")
    nodes = [_node("input", (), kind="input")]
    current = "input"
    for index, count in enumerate((32, 64, 128), start=1):
        nodes += [
            _node(f"conv{index}", (current,), kind="conv", filters=count, kernel=3, activation="relu"),
            _node(f"pool{index}", (f"conv{index}",), kind="maxpool", window=2),
            _node(f"dropout{index}", (f"pool{index}",), kind="dropout", rate=0.25),
        ]
        current = f"dropout{index}"
    nodes += [
        _node("flatten", (current,), kind="flatten"),
        _node("dense", ("flatten",), kind="dense", units=512, activation="relu"),
        _node("dense_dropout", ("dense",), kind="dropout", rate=0.5),
        _node("output", ("dense_dropout",), kind="dense", units=4, activation="softmax"),
    ]
    return ModelGraph(
        kind="subclass_initial",
        nodes=nodes,
        input_shape=(input_size, input_size, 3),
        output_id="output",
        class_labels=TASK_LABELS[task],
        loss_name="categorical_crossentropy",
        build_args={"input_size": input_size, "task": task},
        seed=seed,
    )


def _fusion_builder(task: str) -> Callable[..., ModelGraph]:
    def build(backbone: Mapping[str, Any] | None = None, input_size: int = 128, dropout: float = FUSION_DROPOUT,
              seed: int = 0, **_: Any) -> ModelGraph:
        return build_fusion_model(
            num_classes=len(TASK_LABELS[task]),
            backbone=BackboneConfig.from_dict(backbone),
            input_size=input_size,
            task=task,
            dropout=dropout,
            seed=seed,
        )

    return build


def _pso_builder(dropout: float = 0.5, backbone: Mapping[str, Any] | None = None, input_size: int = 128,
                 seed: int = 0) -> ModelGraph:
    config = BackboneConfig.from_dict(backbone) if backbone is not None else None
    return build_pso_binary_model(dropout=dropout, backbone=config, input_size=input_size, seed=seed)


_BUILDERS: dict[str, Callable[..., ModelGraph]] = {
    "baseline": build_baseline_binary_cnn,
    "pso_binary": _pso_builder,
    "fusion_binary": _fusion_builder("binary"),
    "fusion_benign": _fusion_builder("benign"),
    "fusion_malignant": _fusion_builder("malignant"),
    "subclass_initial": build_subclass_initial_cnn,
}


def build_model(kind: str, build_args: Mapping[str, Any] | None = None, seed: int = 0) -> ModelGraph:
    key = str(kind or "").strip()
    if key not in _BUILDERS:
        raise KeyError(f"Unknown model kind: {kind}")
    return _BUILDERS[key](**dict(build_args or {}), seed=seed)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def encode_weights(params: ParamSet) -> bytes:
    chunks = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(params))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        shape = tensor.shape
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", len(shape)))
        chunks.append(struct.pack(f"<{len(shape)}I", *shape))
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.payload):
            raise WeightsFormatError(f"truncated weights file while reading {what}", self.offset)
        chunk = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_weights(payload: bytes) -> dict[str, np.ndarray]:
    reader = _Reader(payload)
    if reader.take(4, "magic") != WEIGHTS_MAGIC:
        raise WeightsFormatError("bad magic, expected HFW1", 0)
    (version,) = reader.unpack("<I", "format version")
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"unsupported format version {version}", 4)
    (count,) = reader.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = reader.offset
        (name_length,) = reader.unpack("<H", "name length")
        try:
            name = reader.take(name_length, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightsFormatError("tensor name is not UTF-8", start + 2) from exc
        if name in tensors:
            raise WeightsFormatError(f"duplicate tensor {name}", start)
        (rank,) = reader.unpack("<B", "rank")
        shape = reader.unpack(f"<{rank}I", f"extents of {name}") if rank else ()
        size = int(np.prod(shape)) if shape else 1
        data = reader.take(4 * size, f"data of {name}")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)
    if reader.offset != len(payload):
        raise WeightsFormatError("trailing bytes after last tensor", reader.offset)
    return tensors


def _card_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_weights(model: ModelGraph, path: str | Path) -> Path:
    """Write the HFW1 weights file and its JSON model card beside it."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_weights(model.params))
    _card_path(target).write_text(json.dumps(model.card(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("saved %d tensors to %s", len(model.params), target)
    return target


def load_weights(path: str | Path, model: ModelGraph) -> ModelGraph:
    """Replace every parameter of *model* with the tensors stored at *path*."""
    stored = decode_weights(Path(path).read_bytes())
    for name, tensor in model.params.items():
        if name not in stored:
            raise ShapeError(f"weights file has no tensor {name}")
        if stored[name].shape != tensor.shape:
            raise ShapeError(f"tensor {name}: file has shape {stored[name].shape}, model expects {tensor.shape}")
    extra = [name for name in stored if name not in model.params]
    if extra:
        raise ShapeError(f"weights file has tensor {extra[0]} that the model does not define")
    for name, tensor in model.params.items():
        tensor.data = stored[name].astype(tensor.data.dtype, copy=True)
    return model


def read_model_card(path: str | Path) -> dict:
    card_path = _card_path(Path(path))
    try:
        card = json.loads(card_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"missing model card {card_path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model card {card_path} is not valid JSON: {exc}") from exc
    if not isinstance(card, dict) or card.get("schema_version") != MODEL_CARD_SCHEMA_VERSION:
        raise ConfigError(f"model card {card_path} is not a {MODEL_CARD_SCHEMA_VERSION} document")
    return card


def load_model(path: str | Path) -> ModelGraph:
    """Rebuild the architecture named by the model card, then load its weights."""
    card = read_model_card(path)
    try:
        model = build_model(card["kind"], card.get("build_args") or {})
    except KeyError as exc:
        raise ConfigError(f"model card names an unknown model: {exc}") from exc
    rescale = card.get("rescale", DEFAULT_RESCALE)
    if not isinstance(rescale, (int, float)) or isinstance(rescale, bool) or not rescale > 0:
        raise ConfigError(f"model card rescale must be a positive number, got {rescale!r}")
    model.rescale = float(rescale)
    return load_weights(path, model)


# ---------------------------------------------------------------------------
# Hierarchical prediction
# ---------------------------------------------------------------------------


class Classifier(Protocol):
    input_shape: tuple[int, ...]
    class_labels: tuple[str, ...]

    def predict_proba(self, images: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class Diagnosis:
    binary_class: str
    binary_probabilities: tuple[float, ...]
    subtype: str
    subtype_probabilities: tuple[float, ...]
    subtype_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        taxonomy = TASK_LABELS.get(self.binary_class) if self.binary_class in BINARY_LABELS else None
        if taxonomy is None:
            raise TaxonomyError(f"unknown binary class '{self.binary_class}'", segment=self.binary_class)
        if tuple(self.subtype_labels) != tuple(taxonomy) or self.subtype not in taxonomy:
            raise TaxonomyError(
                f"subtype '{self.subtype}' from labels {list(self.subtype_labels)} "
                f"does not belong to class '{self.binary_class}'",
                segment=self.subtype,
            )
        if len(self.subtype_probabilities) != len(self.subtype_labels):
            raise ShapeError(
                f"{len(self.subtype_probabilities)} subtype probabilities for {len(self.subtype_labels)} labels"
            )

    def to_dict(self) -> dict:
        return {
            "schema_version": DIAGNOSIS_SCHEMA_VERSION,
            "binary_class": self.binary_class,
            "binary_probabilities": dict(zip(BINARY_LABELS, self.binary_probabilities)),
            "subtype": self.subtype,
            "subtype_probabilities": dict(zip(self.subtype_labels, self.subtype_probabilities)),
        }

    def to_text(self) -> str:
        binary = " ".join(f"{label}={p:.6f}" for label, p in zip(BINARY_LABELS, self.binary_probabilities))
        subtype = " ".join(f"{label}={p:.6f}" for label, p in zip(self.subtype_labels, self.subtype_probabilities))
        return (
            f"class: {self.binary_class}\n"
            f"subtype: {self.subtype}\n"
            f"binary probabilities: {binary}\n"
            f"subtype probabilities: {subtype}\n"
        )


def _normalized(row: np.ndarray) -> tuple[float, ...]:
    values = np.asarray(row, dtype=np.float64)
    return tuple(float(v) for v in values / values.sum())


def hierarchical_predict_many(
    binary_model: Classifier,
    benign_model: Classifier,
    malignant_model: Classifier,
    images: np.ndarray,
) -> list[Diagnosis]:
    """Route each image to exactly one subtype model by the binary argmax."""
    images = np.asarray(images, dtype=np.float32)
    for model in (binary_model, benign_model, malignant_model):
        if images.shape[1:] != tuple(model.input_shape):
            raise ShapeError(f"image shape {images.shape[1:]} does not match model input {tuple(model.input_shape)}")
    binary = binary_model.predict_proba(images)
    routes = binary.argmax(axis=1)
    subtype_probs: dict[int, np.ndarray] = {}
    for route, model in ((0, benign_model), (1, malignant_model)):
        selected = np.flatnonzero(routes == route)
        if selected.size:
            for index, row in zip(selected, model.predict_proba(images[selected])):
                subtype_probs[int(index)] = row
    diagnoses = []
    for index, route in enumerate(routes):
        model = benign_model if route == 0 else malignant_model
        probs = _normalized(subtype_probs[index])
        diagnoses.append(
            Diagnosis(
                binary_class=BINARY_LABELS[int(route)],
                binary_probabilities=_normalized(binary[index]),
                subtype=tuple(model.class_labels)[int(np.argmax(probs))],
                subtype_probabilities=probs,
                subtype_labels=tuple(model.class_labels),
            )
        )
    return diagnoses


def hierarchical_predict(
    binary_model: Classifier,
    benign_model: Classifier,
    malignant_model: Classifier,
    image: np.ndarray,
) -> Diagnosis:
    image = np.asarray(image, dtype=np.float32)
    return hierarchical_predict_many(binary_model, benign_model, malignant_model, image[None])[0]
