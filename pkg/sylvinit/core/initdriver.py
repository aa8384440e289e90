from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
import structlog

from sylvinit.config.constants import DEFAULT_LAMBDA, DEFAULT_PATCHES_PER_IMAGE, DEFAULT_PER_CLASS
from sylvinit.core.dataio import LabeledDataset
from sylvinit.core.errors import (
    ConfigurationError,
    DegenerateActivationError,
    ParameterError,
    ShapeError,
)
from sylvinit.core.latent import CodeKind, LatentCodeSpec, build_code
from sylvinit.core.nnet import LayerKind, Network, layer_forward
from sylvinit.core.patches import extract_patches, reshape_weight, sample_patches
from sylvinit.core.sylvester import build_operands, objective, solve

log = structlog.get_logger(__name__)

REPORT_HEADER = [
    "layer", "d_i", "d_o", "n_used", "code", "residual", "objective", "clipped", "seconds",
]


@dataclass(frozen=True, slots=True)
class InitConfig:
    """
    lam weighs the encoding loss. codes maps layer name -> LatentCodeSpec; layers
    not listed get default_code, except the last trainable layer which gets
    one-hot. layer_filter restricts which layers are solved (None = all).
    """
    lam: float = DEFAULT_LAMBDA
    per_class_samples: int = DEFAULT_PER_CLASS
    patches_per_image: int = DEFAULT_PATCHES_PER_IMAGE
    codes: Dict[str, LatentCodeSpec] = field(default_factory=dict)
    default_code: CodeKind = CodeKind.PCA
    eps: Optional[float] = None
    seed: int = 0
    layer_filter: Optional[FrozenSet[str]] = None

    def __post_init__(self):
        object.__setattr__(self, "default_code", CodeKind(self.default_code))
        if self.layer_filter is not None:
            object.__setattr__(self, "layer_filter", frozenset(self.layer_filter))
        if not self.lam > 0:
            raise ParameterError(f"lambda must be positive, got {self.lam}")
        if self.per_class_samples < 1:
            raise ParameterError("per_class_samples must be >= 1")
        if self.patches_per_image < 1:
            raise ParameterError("patches_per_image must be >= 1")
        if self.eps is not None and not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")

    def layer_seed(self, index: int) -> int:
        return int(np.random.SeedSequence([self.seed, index]).generate_state(1)[0])

    def code_for(self, name: str, index: int, is_last: bool) -> LatentCodeSpec:
        """
        The layer's code spec; a spec without its own seed gets layer_seed(index).
        """
        spec = self.codes.get(name)
        if spec is not None:
            return spec if spec.seed is not None else spec.with_seed(self.layer_seed(index))
        kind = CodeKind.ONE_HOT if is_last else self.default_code
        return LatentCodeSpec(kind=kind, seed=self.layer_seed(index))

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "per_class_samples": self.per_class_samples,
            "patches_per_image": self.patches_per_image,
            "codes": {k: v.to_dict() for k, v in self.codes.items()},
            "default_code": self.default_code.value,
            "eps": self.eps,
            "seed": self.seed,
            "layer_filter": sorted(self.layer_filter) if self.layer_filter is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InitConfig":
        lf = data.get("layer_filter")
        return cls(
            lam=data.get("lam", DEFAULT_LAMBDA),
            per_class_samples=data.get("per_class_samples", DEFAULT_PER_CLASS),
            patches_per_image=data.get("patches_per_image", DEFAULT_PATCHES_PER_IMAGE),
            codes={k: LatentCodeSpec.from_dict(v) for k, v in data.get("codes", {}).items()},
            default_code=CodeKind(data.get("default_code", "pca")),
            eps=data.get("eps"),
            seed=data.get("seed", 0),
            layer_filter=frozenset(lf) if lf is not None else None,
        )


@dataclass(frozen=True, slots=True)
class LayerInitRecord:
    layer: str
    d_i: int
    d_o: int
    n_used: int
    code: str
    residual: float
    objective: float
    clipped: int
    seconds: float
    output_std: float = float("nan")

    def to_row(self, timing: bool = True) -> list:
        return [
            self.layer, self.d_i, self.d_o, self.n_used, self.code,
            f"{self.residual:.6e}", f"{self.objective:.6e}", self.clipped,
            f"{self.seconds:.6f}" if timing else "",
        ]


@dataclass(slots=True)
class InitReport:
    records: List[LayerInitRecord] = field(default_factory=list)
    total_seconds: float = 0.0

    def rows(self, timing: bool = True) -> List[list]:
        return [r.to_row(timing) for r in self.records]


def stratified_subset(dataset: LabeledDataset, per_class: int, seed: int) -> LabeledDataset:
    """
    min(per_class, available) samples of every class present, drawn without
    replacement; class order, then original index order.
    """
    if len(dataset) == 0:
        raise ParameterError(f"cannot subset empty dataset {dataset.name!r}")
    if per_class < 1:
        raise ParameterError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    picked = []
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size > per_class:
            idx = np.sort(rng.choice(idx, size=per_class, replace=False))
        picked.append(idx)
    return dataset.subset(np.concatenate(picked))


def _check_filter(net: Network, cfg: InitConfig) -> None:
    trainable = {layer.name for layer in net.spec.trainable_layers()}
    if cfg.layer_filter is not None:
        unknown = sorted(cfg.layer_filter - trainable)
        if unknown:
            raise ConfigurationError(f"layer filter names no trainable layer: {unknown}")
    for name in cfg.codes:
        if name not in trainable:
            raise ConfigurationError(f"code override for unknown layer {name!r}")


def initialize(
    net: Network, data: LabeledDataset, cfg: InitConfig
) -> Tuple[Network, InitReport]:
    """
    Sequential layer-wise Sylvester initialization.

    Walks the layers in order, carrying the subset's activations. Each selected
    trainable layer is solved on its current input (conv inputs as sampled
    patches), installed with zero bias, and the activations are pushed through
    it. Unselected layers keep their parameters and still propagate.
    """
    if len(data) == 0:
        raise ParameterError("initialization subset is empty")
    _check_filter(net, cfg)
    spec = net.spec
    last = spec.trainable_layers()[-1].name
    report = InitReport()
    start = time.perf_counter()

    acts: np.ndarray = data.images
    for i, layer in enumerate(spec.layers):
        selected = layer.trainable and (cfg.layer_filter is None or layer.name in cfg.layer_filter)
        if selected:
            record = _init_layer(net, i, acts, data, cfg, is_last=layer.name == last)
        acts = layer_forward(net, i, acts)
        if selected:
            record = replace(record, output_std=float(acts.std()))
            report.records.append(record)
            log.info("layer initialized", layer=layer.name, d_i=record.d_i, d_o=record.d_o,
                     n=record.n_used, code=record.code, residual=record.residual,
                     clipped=record.clipped, output_std=record.output_std)

    report.total_seconds = time.perf_counter() - start
    return net, report


def _init_layer(
    net: Network, index: int, acts: np.ndarray, data: LabeledDataset, cfg: InitConfig,
    is_last: bool,
) -> LayerInitRecord:
    layer = net.spec.layers[index]
    code = cfg.code_for(layer.name, index, is_last)
    start = time.perf_counter()

    if layer.kind is LayerKind.CONV2D:
        pm = extract_patches(acts, layer.f_h, layer.f_w, layer.stride, layer.pad, data.labels)
        pm = sample_patches(pm, cfg.patches_per_image, cfg.layer_seed(index))
        x, labels = pm.x, pm.labels
    else:
        x, labels = acts, data.labels

    if not np.any(x):
        raise DegenerateActivationError(layer.name)

    s = build_code(code, x, layer.out, labels, data.num_classes)
    ops = build_operands(x, s, cfg.lam)
    w, diag = solve(ops, cfg.eps)

    current = net.params[layer.name]["weight"]
    if layer.kind is LayerKind.CONV2D:
        w_installed = reshape_weight(w, current.shape[1], layer.f_h, layer.f_w)
    else:
        w_installed = w
    if w_installed.shape != current.shape:
        raise ShapeError(f"{layer.name}: solved weight {w_installed.shape} != {current.shape}")
    net.params[layer.name]["weight"] = w_installed
    net.params[layer.name]["bias"] = np.zeros(layer.out)
    net.velocity[layer.name] = {"weight": np.zeros_like(w_installed), "bias": np.zeros(layer.out)}

    return LayerInitRecord(
        layer=layer.name,
        d_i=x.shape[0],
        d_o=layer.out,
        n_used=x.shape[1],
        code=code.kind.value,
        residual=diag.residual,
        objective=objective(w, x, s, cfg.lam),
        clipped=diag.clipped_denominators,
        seconds=time.perf_counter() - start,
    )
