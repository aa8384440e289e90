from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache, partial
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

import structlog

from sylvinit.config.schemes import RANDOM_SCHEMES, SCHEMES
from sylvinit.core.dataio import LabeledDataset, Split, load_dataset
from sylvinit.core.errors import ConfigurationError
from sylvinit.core.initdriver import InitConfig, InitReport, initialize, stratified_subset
from sylvinit.core.nnet import (
    EpochRecord,
    InitScheme,
    Network,
    NetworkSpec,
    TrainConfig,
    evaluate,
    random_init,
    train,
)
from sylvinit.core.save import load_params, load_spec

log = structlog.get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")

RECORD_HEADER = [
    "method", "dataset", "shot", "seed", "initial_accuracy", "final_accuracy",
    "init_seconds", "train_seconds",
]
CURVE_HEADER = ["epoch", "wall_seconds", "test_accuracy"]
BENCH_HEADER = ["method", "per_class_samples", "init_seconds", "initial_accuracy"]
LAMBDA_HEADER = ["lambda", "initial_accuracy", "final_accuracy"]


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def timed(value: float, timing: bool = True) -> str:
    return _fmt(value) if timing else ""


@dataclass(frozen=True, slots=True)
class DataSource:
    """
    Where a run's images come from. Hashable so loaded splits can be cached.
    """
    name: str
    data_dir: Optional[str] = None
    blob_seed: int = 0
    blob_classes: int = 3
    blob_side: int = 8
    blob_channels: int = 1
    blob_per_class: int = 100
    blob_spread: float = 0.1

    def load(self, split: Split) -> LabeledDataset:
        return _load_cached(self, split)


@lru_cache(maxsize=8)
def _load_cached(source: DataSource, split: Split) -> LabeledDataset:
    if source.name == "blobs":
        return load_dataset(
            "blobs",
            split=split,
            seed=source.blob_seed,
            classes=source.blob_classes,
            side=source.blob_side,
            channels=source.blob_channels,
            per_class=source.blob_per_class,
            spread=source.blob_spread,
        )
    return load_dataset(source.name, source.data_dir, split)


@dataclass(frozen=True, slots=True)
class Setup:
    """
    Everything that decides how a network is built and initialized.

    arch is a registry name or a path to a JSON network spec. params, when set,
    seeds the network before the scheme runs (fine-tune mode); mismatched
    tensors such as another dataset's classifier are skipped.
    """
    source: DataSource
    arch: str = "small_cnn"
    scheme: str = "sylvester"
    init: InitConfig = field(default_factory=InitConfig)
    params: Optional[str] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True, slots=True)
class ExperimentRecord:
    method: str
    dataset: str
    shot: str
    seed: int
    initial_accuracy: float
    final_accuracy: float
    init_seconds: float
    train_seconds: float

    def to_row(self, timing: bool = True) -> list:
        return [
            self.method, self.dataset, self.shot, self.seed,
            _fmt(self.initial_accuracy), _fmt(self.final_accuracy),
            timed(self.init_seconds, timing),
            timed(self.train_seconds, timing),
        ]


@dataclass(slots=True)
class InitOutcome:
    net: Network
    report: InitReport
    seconds: float


def resolve_spec(arch: str, data: LabeledDataset) -> NetworkSpec:
    if Path(arch).suffix == ".json":
        spec = load_spec(arch)
        if spec.input_dims != data.image_dims or spec.num_classes != data.num_classes:
            raise ConfigurationError(
                f"{arch} expects {spec.input_dims}/{spec.num_classes} classes, "
                f"data is {data.image_dims}/{data.num_classes}"
            )
        return spec
    return NetworkSpec.from_architecture(arch, data.image_dims, data.num_classes)


def init_network(setup: Setup, train_set: LabeledDataset, seed: int) -> InitOutcome:
    """
    Build the network and initialize it with setup.scheme.

    Layers outside a layer filter come from setup.params when given, otherwise
    from a He-uniform draw.
    """
    spec = resolve_spec(setup.arch, train_set)
    net = Network(spec)
    if setup.params:
        load_params(net, setup.params, skip_mismatched=True)
    else:
        random_init(net, InitScheme.HE_UNIFORM, seed)

    cfg = replace(setup.init, seed=seed)
    start = time.perf_counter()
    if setup.scheme in RANDOM_SCHEMES:
        random_init(net, setup.scheme, seed, layers=cfg.layer_filter)
        report = InitReport()
    else:
        subset = stratified_subset(train_set, cfg.per_class_samples, seed)
        net, report = initialize(net, subset, cfg)
    seconds = time.perf_counter() - start
    report.total_seconds = seconds
    log.info("network initialized", scheme=setup.scheme, seed=seed, seconds=seconds,
             layers=len(report.records))
    return InitOutcome(net=net, report=report, seconds=seconds)


def run_training(
    setup: Setup, train_cfg: TrainConfig, shot: Optional[int], seed: int
) -> Tuple[ExperimentRecord, List[EpochRecord]]:
    """
    Few-shot or full-data run: init, evaluate, train, evaluate.

    With a shot count the training set is that many samples per class, and the
    initializer only sees those samples too.
    """
    full = setup.source.load("train")
    test = setup.source.load("test")
    train_set = full if shot is None else stratified_subset(full, shot, seed)

    outcome = init_network(setup, train_set, seed)
    start = time.perf_counter()
    curve = train(outcome.net, train_set, replace(train_cfg, seed=seed), eval_set=test)
    train_seconds = time.perf_counter() - start

    record = ExperimentRecord(
        method=setup.scheme,
        dataset=setup.source.name,
        shot="full" if shot is None else str(shot),
        seed=seed,
        initial_accuracy=curve[0].test_accuracy,
        final_accuracy=curve[-1].test_accuracy,
        init_seconds=outcome.seconds,
        train_seconds=train_seconds,
    )
    return record, curve


def initial_accuracy(setup: Setup, seed: int) -> Tuple[float, float]:
    """
    (init seconds, test accuracy right after init) on the full training split.
    """
    outcome = init_network(setup, setup.source.load("train"), seed)
    return outcome.seconds, evaluate(outcome.net, setup.source.load("test"))


def bench_row(setup: Setup, seed: int, count: int) -> list:
    counted = replace(setup, init=replace(setup.init, per_class_samples=count))
    seconds, acc = initial_accuracy(counted, seed)
    return ["sylvester", count, seconds, acc]


def bench_sample_counts(
    setup: Setup, counts: Sequence[int], seed: int, reference: bool = False, jobs: int = 1
) -> List[list]:
    """
    One [method, count, init seconds, initial accuracy] row per sample count,
    in ascending count order. With reference, a trailing He-uniform row whose
    count is blank.
    """
    setup = replace(setup, scheme="sylvester")
    rows = run_jobs(partial(bench_row, setup, seed), sorted(counts), jobs)
    if reference:
        seconds, acc = initial_accuracy(replace(setup, scheme="he-uniform"), seed)
        rows.append(["he-uniform", "", seconds, acc])
    return rows


def lambda_row(
    setup: Setup, train_cfg: TrainConfig, shot: Optional[int], seed: int, lam: float
) -> list:
    weighted = replace(setup, init=replace(setup.init, lam=lam))
    record, _ = run_training(weighted, train_cfg, shot, seed)
    return [lam, record.initial_accuracy, record.final_accuracy]


def sweep_lambda(
    setup: Setup,
    lambdas: Sequence[float],
    train_cfg: TrainConfig,
    shot: Optional[int],
    seed: int,
    jobs: int = 1,
) -> List[list]:
    setup = replace(setup, scheme="sylvester")
    task = partial(lambda_row, setup, train_cfg, shot, seed)
    return run_jobs(task, sorted(lambdas), jobs)


def run_jobs(fn: Callable[[T], R], tasks: Sequence[T], jobs: int = 1) -> List[R]:
    """
    Map fn over tasks, in a process pool when jobs > 1. Results keep task order.
    """
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))
