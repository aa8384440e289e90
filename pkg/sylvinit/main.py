from __future__ import annotations

import argparse
import os
import sys
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import structlog

from sylvinit.config.constants import (
    BLOB_CHANNELS,
    BLOB_CLASSES,
    BLOB_PER_CLASS,
    BLOB_SIDE,
    BLOB_SPREAD,
    DATA_DIR_ENV,
    DEFAULT_BATCH_SIZE,
    DEFAULT_DECAY_FACTOR,
    DEFAULT_LAMBDA,
    DEFAULT_LR,
    DEFAULT_MOMENTUM,
    DEFAULT_PATCHES_PER_IMAGE,
)
from sylvinit.config.logs import configure_logging
from sylvinit.config.schemes import CODES, DATASET_DEFAULTS, SCHEMES, registry_help
from sylvinit.core.errors import SylvInitError
from sylvinit.core.experiments import (
    BENCH_HEADER,
    CURVE_HEADER,
    LAMBDA_HEADER,
    RECORD_HEADER,
    DataSource,
    Setup,
    bench_sample_counts,
    init_network,
    run_jobs,
    run_training,
    sweep_lambda,
    timed,
)
from sylvinit.core.initdriver import REPORT_HEADER, InitConfig
from sylvinit.core.latent import CodeKind, LatentCodeSpec
from sylvinit.core.nnet import TrainConfig
from sylvinit.core.save import save_params, write_csv

log = structlog.get_logger(__name__)

DEFAULT_LAMBDAS = "0.01,0.1,1,10,100"


def _list_of(kind: Callable) -> Callable[[str], list]:
    def parse(text: str) -> list:
        try:
            return [kind(part) for part in text.split(",") if part.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad list {text!r}: {exc}") from exc
    return parse


def _code_arg(text: str) -> tuple[Optional[str], str]:
    """
    "kmeans" sets the hidden-layer default; "conv2=lda" overrides one layer.
    """
    layer, _, code = text.rpartition("=")
    if code not in CODES:
        raise argparse.ArgumentTypeError(f"unknown code {code!r}, pick from {sorted(CODES)}")
    return (layer or None), code


def _common(parser: argparse.ArgumentParser) -> None:
    data = parser.add_argument_group("data")
    data.add_argument("--dataset", choices=sorted(DATASET_DEFAULTS), default="blobs")
    data.add_argument("--data-dir", default=None,
                      help=f"CIFAR binaries directory (falls back to ${DATA_DIR_ENV})")
    data.add_argument("--blob-classes", type=int, default=BLOB_CLASSES)
    data.add_argument("--blob-side", type=int, default=BLOB_SIDE)
    data.add_argument("--blob-channels", type=int, default=BLOB_CHANNELS)
    data.add_argument("--blob-per-class", type=int, default=BLOB_PER_CLASS)
    data.add_argument("--blob-spread", type=float, default=BLOB_SPREAD)

    init = parser.add_argument_group("initialization")
    init.add_argument("--arch", default="small_cnn", help="registry name or network JSON file")
    init.add_argument("--scheme", choices=sorted(SCHEMES), default="sylvester",
                      help=registry_help(SCHEMES))
    init.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    init.add_argument("--per-class", type=int, default=None,
                      help="init samples per class (dataset default when omitted)")
    init.add_argument("--patches-per-image", type=int, default=DEFAULT_PATCHES_PER_IMAGE)
    init.add_argument("--code", type=_code_arg, action="append", default=[],
                      help="latent code, or layer=code for one layer; repeatable. "
                      + registry_help(CODES))
    init.add_argument("--layers", type=_list_of(str), default=None,
                      help="comma list of layers to initialize (fine-tune mode)")
    init.add_argument("--eps", type=float, default=None)
    init.add_argument("--params", default=None, help="starting parameter file")

    run = parser.add_argument_group("run")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default=None)
    run.add_argument("--overwrite", action="store_true")
    run.add_argument("--no-timing", action="store_true",
                     help="leave timing columns blank so reruns are byte-identical")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("-v", "--verbose", action="count", default=0)


def _training(parser: argparse.ArgumentParser, epochs: Optional[int]) -> None:
    t = parser.add_argument_group("training")
    t.add_argument("--shot", type=int, default=None, help="training samples per class")
    t.add_argument("--epochs", type=int, default=epochs,
                   help="dataset default when omitted" if epochs is None else None)
    t.add_argument("--lr", type=float, default=DEFAULT_LR)
    t.add_argument("--momentum", type=float, default=DEFAULT_MOMENTUM)
    t.add_argument("--decay-epochs", type=_list_of(int), default=None)
    t.add_argument("--decay-factor", type=float, default=DEFAULT_DECAY_FACTOR)
    t.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)


def _source(args: argparse.Namespace) -> DataSource:
    return DataSource(
        name=args.dataset,
        data_dir=args.data_dir or os.environ.get(DATA_DIR_ENV),
        blob_seed=args.seed,
        blob_classes=args.blob_classes,
        blob_side=args.blob_side,
        blob_channels=args.blob_channels,
        blob_per_class=args.blob_per_class,
        blob_spread=args.blob_spread,
    )


def _init_config(args: argparse.Namespace) -> InitConfig:
    default_code = CodeKind.PCA
    overrides: Dict[str, LatentCodeSpec] = {}
    for layer, code in args.code:
        if layer is None:
            default_code = CodeKind(code)
        else:
            overrides[layer] = LatentCodeSpec(kind=CodeKind(code))
    per_class = args.per_class
    if per_class is None:
        per_class = DATASET_DEFAULTS[args.dataset].per_class
    return InitConfig(
        lam=args.lam,
        per_class_samples=per_class,
        patches_per_image=args.patches_per_image,
        codes=overrides,
        default_code=default_code,
        eps=args.eps,
        seed=args.seed,
        layer_filter=frozenset(args.layers) if args.layers else None,
    )


def _setup(args: argparse.Namespace) -> Setup:
    return Setup(
        source=_source(args),
        arch=args.arch,
        scheme=args.scheme,
        init=_init_config(args),
        params=args.params,
    )


def _train_config(args: argparse.Namespace) -> TrainConfig:
    defaults = DATASET_DEFAULTS[args.dataset]
    decay = args.decay_epochs
    if decay is None:
        decay = defaults.decay_epochs
    return TrainConfig(
        lr=args.lr,
        momentum=args.momentum,
        decay_epochs=tuple(decay),
        decay_factor=args.decay_factor,
        epochs=defaults.epochs if args.epochs is None else args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def cmd_init(args: argparse.Namespace) -> int:
    setup = _setup(args)
    outcome = init_network(setup, setup.source.load("train"), args.seed)
    out = Path(args.out or "results/init_report.csv")
    params_out = Path(args.params_out or out.with_suffix(".bin"))
    save_params(outcome.net, params_out)
    write_csv(out, REPORT_HEADER, outcome.report.rows(timing=not args.no_timing), args.overwrite)
    log.info("init written", report=str(out), params=str(params_out),
             seconds=outcome.seconds)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    setup = _setup(args)
    seeds: List[int] = sorted(args.seeds) if args.seeds else [args.seed]
    task = partial(run_training, setup, _train_config(args), args.shot)
    results = run_jobs(task, seeds, args.jobs)

    out = Path(args.out or "results/train.csv")
    timing = not args.no_timing
    write_csv(out, RECORD_HEADER, [rec.to_row(timing) for rec, _ in results], args.overwrite)

    curve_out = Path(args.curve_out or out.with_name(out.stem + "_curve.csv"))
    for seed, (_, curve) in zip(seeds, results):
        path = curve_out if len(seeds) == 1 else curve_out.with_stem(f"{curve_out.stem}_seed{seed}")
        rows = [[e.epoch, timed(e.wall_seconds, timing), f"{e.test_accuracy:.6f}"] for e in curve]
        write_csv(path, CURVE_HEADER, rows, args.overwrite)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    rows = bench_sample_counts(_setup(args), args.counts, args.seed, args.reference, args.jobs)
    timing = not args.no_timing
    out_rows = [
        [method, count, timed(seconds, timing), f"{acc:.6f}"]
        for method, count, seconds, acc in rows
    ]
    write_csv(Path(args.out or "results/bench.csv"), BENCH_HEADER, out_rows, args.overwrite)
    return 0


def cmd_sweep_lambda(args: argparse.Namespace) -> int:
    rows = sweep_lambda(
        _setup(args), args.lambdas, _train_config(args), args.shot, args.seed, args.jobs
    )
    out_rows = [[f"{lam:g}", f"{init:.6f}", f"{final:.6f}"] for lam, init, final in rows]
    write_csv(Path(args.out or "results/lambda.csv"), LAMBDA_HEADER, out_rows, args.overwrite)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sylvinit",
        description="Sylvester-equation network initialization and desk-scale experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="initialize a network, write params and the layer report")
    _common(p)
    p.add_argument("--params-out", default=None)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="init, train and record initial/final accuracy")
    _common(p)
    _training(p, None)
    p.add_argument("--seeds", type=_list_of(int), default=None, help="comma list, one run each")
    p.add_argument("--curve-out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="init time and initial accuracy per sample count")
    _common(p)
    p.add_argument("--counts", type=_list_of(int), default=[10, 100, 300])
    p.add_argument("--reference", action="store_true", help="add a he-uniform row")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-lambda", help="initial/final accuracy per lambda")
    _common(p)
    _training(p, 0)
    p.add_argument("--lambdas", type=_list_of(float), default=_list_of(float)(DEFAULT_LAMBDAS))
    p.set_defaults(func=cmd_sweep_lambda)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except (SylvInitError, OSError) as exc:
        log.error("run failed", command=args.command, error=str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
