from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Collection, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from sylvinit.config.architectures import ARCHITECTURES
from sylvinit.config.constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_DECAY_FACTOR,
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    DEFAULT_MOMENTUM,
)
from sylvinit.core.dataio import LabeledDataset
from sylvinit.core.errors import ConfigurationError, LabelError, ParameterError, ShapeError
from sylvinit.core.matcore import Matrix
from sylvinit.core.patches import (
    Tensor4,
    col2im,
    flatten_weight,
    im2col,
    output_size,
    reshape_weight,
)

log = structlog.get_logger(__name__)

Params = Dict[str, Dict[str, np.ndarray]]


class LayerKind(str, Enum):
    CONV2D = "conv2d"
    DENSE = "dense"
    RELU = "relu"
    FLATTEN = "flatten"
    GLOBAL_AVG_POOL = "global_avg_pool"


class InitScheme(str, Enum):
    HE_UNIFORM = "he-uniform"
    HE_NORMAL = "he-normal"
    XAVIER_UNIFORM = "xavier-uniform"
    XAVIER_NORMAL = "xavier-normal"


@dataclass(frozen=True, slots=True)
class LayerSpec:
    kind: LayerKind
    name: str
    out: int = 0
    f_h: int = 1
    f_w: int = 1
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.trainable and self.out < 1:
            raise ConfigurationError(f"layer {self.name!r} needs a positive output size")

    @property
    def trainable(self) -> bool:
        return self.kind in (LayerKind.CONV2D, LayerKind.DENSE)

    def to_dict(self) -> dict:
        data: dict = {"kind": self.kind.value, "name": self.name}
        if self.kind is LayerKind.DENSE:
            data["out"] = self.out
        elif self.kind is LayerKind.CONV2D:
            data.update(out=self.out, f_h=self.f_h, f_w=self.f_w, stride=self.stride, pad=self.pad)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "LayerSpec":
        return cls(
            kind=LayerKind(data["kind"]),
            name=data["name"],
            out=data.get("out", 0),
            f_h=data.get("f_h", 1),
            f_w=data.get("f_w", 1),
            stride=data.get("stride", 1),
            pad=data.get("pad", 0),
        )


@dataclass(frozen=True, slots=True)
class NetworkSpec:
    """
    Input dims (h, w, c), ordered layers and class count.

    The shape chain is checked on construction: conv layers need image-shaped
    input, dense layers need flat input, and the network must end in a flat
    num_classes vector.
    """
    input_dims: Tuple[int, int, int]
    layers: Tuple[LayerSpec, ...]
    num_classes: int
    shapes: Tuple[Tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(self.input_dims))
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate layer names in {names}")
        object.__setattr__(self, "shapes", self._shape_chain())

    def _shape_chain(self) -> Tuple[Tuple[int, ...], ...]:
        shape: Tuple[int, ...] = self.input_dims
        chain = [shape]
        for layer in self.layers:
            if layer.kind is LayerKind.CONV2D:
                if len(shape) != 3:
                    raise ShapeError(f"conv layer {layer.name!r} gets flat input {shape}")
                h, w, _ = shape
                oh, ow = output_size(h, w, layer.f_h, layer.f_w, layer.stride, layer.pad)
                shape = (oh, ow, layer.out)
            elif layer.kind is LayerKind.DENSE:
                if len(shape) != 1:
                    raise ShapeError(f"dense layer {layer.name!r} gets image input {shape}")
                shape = (layer.out,)
            elif layer.kind is LayerKind.FLATTEN:
                shape = (int(np.prod(shape)),)
            elif layer.kind is LayerKind.GLOBAL_AVG_POOL:
                if len(shape) != 3:
                    raise ShapeError(f"pool layer {layer.name!r} gets flat input {shape}")
                shape = (shape[2],)
            chain.append(shape)
        if shape != (self.num_classes,):
            raise ConfigurationError(
                f"network ends in shape {shape}, expected ({self.num_classes},) logits"
            )
        return tuple(chain)

    def trainable_layers(self) -> List[LayerSpec]:
        return [layer for layer in self.layers if layer.trainable]

    def layer_index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise ConfigurationError(f"no layer named {name!r}")

    def fans(self, index: int) -> Tuple[int, int]:
        layer = self.layers[index]
        in_shape = self.shapes[index]
        if layer.kind is LayerKind.CONV2D:
            c_i = in_shape[2]
            area = layer.f_h * layer.f_w
            return c_i * area, layer.out * area
        return in_shape[0], layer.out

    def weight_shape(self, index: int) -> Tuple[int, ...]:
        layer = self.layers[index]
        in_shape = self.shapes[index]
        if layer.kind is LayerKind.CONV2D:
            return (layer.out, in_shape[2], layer.f_h, layer.f_w)
        return (layer.out, in_shape[0])

    def to_dict(self) -> dict:
        return {
            "input_dims": list(self.input_dims),
            "num_classes": self.num_classes,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        return cls(
            input_dims=tuple(data["input_dims"]),
            layers=tuple(LayerSpec.from_dict(d) for d in data["layers"]),
            num_classes=data["num_classes"],
        )

    @classmethod
    def from_architecture(
        cls, arch: str, input_dims: Tuple[int, int, int], num_classes: int
    ) -> "NetworkSpec":
        if arch not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {arch!r}")
        return cls.from_dict(ARCHITECTURES[arch](input_dims, num_classes))


class Network:
    """
    Parameters and momentum buffers of a NetworkSpec.

    params[layer]["weight"] is (c_o, c_i, f_h, f_w) for conv and (d_o, d_i) for
    dense; params[layer]["bias"] is (d_o,). Everything starts at zero.
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.params: Params = {}
        self.velocity: Params = {}
        for i, layer in enumerate(spec.layers):
            if not layer.trainable:
                continue
            self.params[layer.name] = {
                "weight": np.zeros(spec.weight_shape(i)),
                "bias": np.zeros(layer.out),
            }
        self.reset_velocity()

    def reset_velocity(self) -> None:
        self.velocity = {
            name: {k: np.zeros_like(v) for k, v in p.items()} for name, p in self.params.items()
        }

    def copy(self) -> "Network":
        net = Network(self.spec)
        net.params = {n: {k: v.copy() for k, v in p.items()} for n, p in self.params.items()}
        net.velocity = {n: {k: v.copy() for k, v in p.items()} for n, p in self.velocity.items()}
        return net

    def named_parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        for layer in self.spec.trainable_layers():
            yield f"{layer.name}.weight", self.params[layer.name]["weight"]
            yield f"{layer.name}.bias", self.params[layer.name]["bias"]

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        layer, _, kind = name.rpartition(".")
        if layer not in self.params or kind not in ("weight", "bias"):
            raise ConfigurationError(f"no parameter named {name!r}")
        current = self.params[layer][kind]
        if value.shape != current.shape:
            raise ShapeError(f"{name}: expected shape {current.shape}, got {value.shape}")
        self.params[layer][kind] = np.asarray(value, dtype=np.float64).copy()


@dataclass(slots=True)
class ForwardCache:
    """
    inputs[i] is what layer i received; cols holds the im2col matrix of each conv.
    """
    inputs: List[np.ndarray] = field(default_factory=list)
    cols: Dict[str, Matrix] = field(default_factory=dict)

    def layer_input(self, spec: NetworkSpec, name: str) -> np.ndarray:
        return self.inputs[spec.layer_index(name)]


@dataclass(frozen=True, slots=True)
class TrainConfig:
    lr: float = DEFAULT_LR
    momentum: float = DEFAULT_MOMENTUM
    decay_epochs: Tuple[int, ...] = ()
    decay_factor: float = DEFAULT_DECAY_FACTOR
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(sorted(self.decay_epochs)))
        if not self.lr > 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if not self.decay_factor > 1:
            raise ParameterError(f"decay_factor must exceed 1, got {self.decay_factor}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")

    def learning_rate(self, epoch: int) -> float:
        drops = sum(1 for d in self.decay_epochs if d <= epoch)
        return self.lr / self.decay_factor**drops

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "momentum": self.momentum,
            "decay_epochs": list(self.decay_epochs),
            "decay_factor": self.decay_factor,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(
            lr=data.get("lr", DEFAULT_LR),
            momentum=data.get("momentum", DEFAULT_MOMENTUM),
            decay_epochs=tuple(data.get("decay_epochs", ())),
            decay_factor=data.get("decay_factor", DEFAULT_DECAY_FACTOR),
            epochs=data.get("epochs", DEFAULT_EPOCHS),
            batch_size=data.get("batch_size", DEFAULT_BATCH_SIZE),
            seed=data.get("seed", 0),
        )


@dataclass(frozen=True, slots=True)
class EpochRecord:
    epoch: int
    wall_seconds: float
    test_accuracy: float
    train_loss: float = float("nan")


def layer_forward(
    net: Network, index: int, acts: np.ndarray, cache: Optional[ForwardCache] = None
) -> np.ndarray:
    """
    Apply layer `index` to acts: (n, h, w, c) images or (d, n) feature columns.
    """
    layer = net.spec.layers[index]
    if layer.kind is LayerKind.CONV2D:
        p = net.params[layer.name]
        cols = im2col(acts, layer.f_h, layer.f_w, layer.stride, layer.pad)
        if cache is not None:
            cache.cols[layer.name] = cols
        out = flatten_weight(p["weight"]) @ cols + p["bias"][:, None]
        oh, ow, c_o = net.spec.shapes[index + 1]
        return out.T.reshape(acts.shape[0], oh, ow, c_o)
    if layer.kind is LayerKind.DENSE:
        p = net.params[layer.name]
        if acts.ndim != 2 or acts.shape[0] != p["weight"].shape[1]:
            raise ShapeError(f"dense layer {layer.name!r} got activations {acts.shape}")
        return p["weight"] @ acts + p["bias"][:, None]
    if layer.kind is LayerKind.RELU:
        return np.maximum(acts, 0.0)
    if layer.kind is LayerKind.FLATTEN:
        return acts.reshape(acts.shape[0], -1).T.copy()
    return acts.mean(axis=(1, 2)).T.copy()


def forward(net: Network, batch: Tensor4) -> Tuple[Matrix, ForwardCache]:
    if batch.ndim != 4 or tuple(batch.shape[1:]) != net.spec.input_dims:
        raise ShapeError(f"batch {batch.shape} does not match input dims {net.spec.input_dims}")
    cache = ForwardCache()
    acts: np.ndarray = batch
    for i in range(len(net.spec.layers)):
        cache.inputs.append(acts)
        acts = layer_forward(net, i, acts, cache)
    return acts, cache


def softmax_cross_entropy(logits: Matrix, labels: Sequence[int]) -> Tuple[float, Matrix]:
    """
    Mean loss over the batch and its gradient w.r.t. the (classes x batch) logits.
    """
    k, b = logits.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (b,):
        raise LabelError(f"{y.size} labels for a batch of {b}")
    if b and (y.min() < 0 or y.max() >= k):
        raise LabelError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=0, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=0, keepdims=True))
    cols = np.arange(b)
    loss = float(-logp[y, cols].mean())
    grad = np.exp(logp)
    grad[y, cols] -= 1.0
    return loss, grad / b


def backward(net: Network, batch: Tensor4, labels: Sequence[int]) -> Tuple[float, Params]:
    logits, cache = forward(net, batch)
    loss, d = softmax_cross_entropy(logits, labels)

    grads: Params = {}
    spec = net.spec
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        x = cache.inputs[i]
        if layer.kind is LayerKind.CONV2D:
            w = net.params[layer.name]["weight"]
            dmat = d.reshape(-1, layer.out).T
            cols = cache.cols[layer.name]
            grads[layer.name] = {
                "weight": reshape_weight(dmat @ cols.T, w.shape[1], layer.f_h, layer.f_w),
                "bias": dmat.sum(axis=1),
            }
            if i:
                d = col2im(flatten_weight(w).T @ dmat, x.shape, layer.f_h, layer.f_w,
                           layer.stride, layer.pad)
        elif layer.kind is LayerKind.DENSE:
            w = net.params[layer.name]["weight"]
            grads[layer.name] = {"weight": d @ x.T, "bias": d.sum(axis=1)}
            d = w.T @ d
        elif layer.kind is LayerKind.RELU:
            d = d * (x > 0)
        elif layer.kind is LayerKind.FLATTEN:
            d = d.T.reshape(x.shape)
        else:
            _, h, w_, _ = x.shape
            d = np.broadcast_to(d.T[:, None, None, :] / (h * w_), x.shape).copy()
    return loss, grads


def sgd_step(net: Network, grads: Params, config: TrainConfig, epoch: int) -> Network:
    """
    v <- momentum * v + g;  p <- p - lr(epoch) * v.
    """
    lr = config.learning_rate(epoch)
    for name, g in grads.items():
        for kind, gk in g.items():
            v = net.velocity[name][kind]
            v *= config.momentum
            v += gk
            net.params[name][kind] -= lr * v
    return net


def predict(net: Network, images: Tensor4, batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, images.shape[0], batch_size):
        logits, _ = forward(net, images[start:start + batch_size])
        out.append(np.argmax(logits, axis=0))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)


def evaluate(net: Network, dataset: LabeledDataset, batch_size: int = 256) -> float:
    """
    Fraction of samples whose argmax logit is the label (ties go to the lower class).
    """
    if len(dataset) == 0:
        raise ParameterError(f"cannot evaluate on empty dataset {dataset.name!r}")
    hits = int(np.count_nonzero(predict(net, dataset.images, batch_size) == dataset.labels))
    return hits / len(dataset)


def random_init(
    net: Network,
    scheme: InitScheme | str,
    seed: int,
    layers: Optional[Collection[str]] = None,
) -> Network:
    """
    He/Xavier uniform and normal draws for every trainable weight, zero biases.
    With layers given, only those are redrawn; draws for the others are still
    consumed so a layer gets the same weights either way.
    """
    scheme = InitScheme(scheme)
    rng = np.random.default_rng(seed)
    for i, layer in enumerate(net.spec.layers):
        if not layer.trainable:
            continue
        fan_in, fan_out = net.spec.fans(i)
        shape = net.spec.weight_shape(i)
        if scheme is InitScheme.HE_UNIFORM:
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=shape)
        elif scheme is InitScheme.HE_NORMAL:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif scheme is InitScheme.XAVIER_UNIFORM:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=shape)
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)
        if layers is not None and layer.name not in layers:
            continue
        net.params[layer.name]["weight"] = w
        net.params[layer.name]["bias"] = np.zeros(layer.out)
    net.reset_velocity()
    return net


def train(
    net: Network,
    train_set: LabeledDataset,
    config: TrainConfig,
    eval_set: Optional[LabeledDataset] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> List[EpochRecord]:
    """
    Minibatch SGD with momentum. Shuffles every epoch with a seeded generator
    and keeps the last partial batch. The returned curve starts with the
    epoch-0 (pre-training) accuracy on eval_set, or train_set if none is given.
    """
    if len(train_set) == 0:
        raise ParameterError("cannot train on an empty dataset")
    eval_set = eval_set if eval_set is not None else train_set
    rng = np.random.default_rng(config.seed)

    curve = [EpochRecord(epoch=0, wall_seconds=0.0, test_accuracy=evaluate(net, eval_set))]
    if on_epoch:
        on_epoch(curve[0])

    start = time.perf_counter()
    n = len(train_set)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = backward(net, train_set.images[idx], train_set.labels[idx])
            sgd_step(net, grads, config, epoch)
            total += loss * idx.size
        rec = EpochRecord(
            epoch=epoch + 1,
            wall_seconds=time.perf_counter() - start,
            test_accuracy=evaluate(net, eval_set),
            train_loss=total / n,
        )
        curve.append(rec)
        log.info("epoch done", epoch=rec.epoch, loss=rec.train_loss, accuracy=rec.test_accuracy,
                 lr=config.learning_rate(epoch))
        if on_epoch:
            on_epoch(rec)
    return curve
