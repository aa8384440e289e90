"""
Desk-scale end-to-end checks. Slow; deselect with -m "not slow".
"""
from dataclasses import replace

import numpy as np
import pytest

from sylvinit.config.schemes import RANDOM_SCHEMES
from sylvinit.core.dataio import LabeledDataset, read_cifar10_file
from sylvinit.core.experiments import DataSource, Setup, bench_sample_counts, run_training
from sylvinit.core.initdriver import InitConfig, initialize, stratified_subset
from sylvinit.core.nnet import (
    Network,
    NetworkSpec,
    TrainConfig,
    evaluate,
    random_init,
)
from sylvinit.core.sylvester import build_operands, objective, objective_gradient, solve
from sylvinit.main import main

pytestmark = pytest.mark.slow

SEEDS = range(5)
BLOBS = DataSource(name="blobs", blob_classes=3, blob_side=8, blob_channels=1,
                   blob_per_class=100, blob_spread=0.1)
# noisy enough that neither init reaches 100% from 10 samples per class
NOISY_BLOBS = replace(BLOBS, blob_spread=1.0)
# larger images so per-sample forward work grows with the init subset
WIDE_BLOBS = replace(BLOBS, blob_side=32)


def _instance(rng, max_o, max_i, max_n, min_n=1):
    d_o = int(rng.integers(1, max_o + 1))
    d_i = int(rng.integers(1, max_i + 1))
    n = int(rng.integers(max(min_n, 1), max(max_n, min_n) + 1))
    lam = float(rng.choice([0.01, 1.0, 10.0]))
    x = rng.standard_normal((d_i, n))
    s = rng.standard_normal((d_o, n))
    return x, s, lam


def _scale(ops):
    return max(np.linalg.norm(ops.c), 1.0)


def test_solver_residual_on_random_instances():
    rng = np.random.default_rng(0)
    solved = 0
    for _ in range(200):
        x, s, lam = _instance(rng, 32, 64, 128)
        w, diag = solve(build_operands(x, s, lam))
        assert w.shape == (s.shape[0], x.shape[0])
        if diag.clipped_denominators:
            continue
        assert diag.residual <= 1e-8
        solved += 1
    assert solved >= 100


def test_solution_is_stationary():
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(50):
        x, s, lam = _instance(rng, 8, 12, 40, min_n=13)
        ops = build_operands(x, s, lam)
        w, _ = solve(ops)
        assert np.linalg.norm(objective_gradient(w, x, s, lam)) <= 1e-7 * _scale(ops)

        point = rng.standard_normal(w.shape)
        grad = objective_gradient(point, x, s, lam)
        fd = np.zeros_like(point)
        for idx in np.ndindex(*point.shape):
            e = np.zeros_like(point)
            e[idx] = h
            fd[idx] = (objective(point + e, x, s, lam) - objective(point - e, x, s, lam)) / (2 * h)
        assert np.linalg.norm(fd - grad) <= 1e-5 * np.linalg.norm(grad)


def test_gradient_descent_reaches_solution():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x, s, lam = _instance(rng, 8, 12, 48, min_n=36)
        ops = build_operands(x, s, lam)
        w_star, _ = solve(ops)
        lipschitz = 2 * (np.linalg.eigvalsh(ops.a)[-1] + np.linalg.eigvalsh(ops.b)[-1])
        w = np.zeros_like(w_star)
        for _ in range(200_000):
            g = objective_gradient(w, x, s, lam)
            if np.linalg.norm(g) < 1e-10:
                break
            w -= g / lipschitz
        assert np.linalg.norm(w - w_star) <= 1e-4


def _initial_accuracy(scheme, seed):
    train, test = BLOBS.load("train"), BLOBS.load("test")
    net = Network(NetworkSpec.from_architecture("small_cnn", train.image_dims, 3))
    if scheme == "sylvester":
        subset = stratified_subset(train, 100, seed)
        net, _ = initialize(random_init(net, "he-uniform", seed), subset, InitConfig(seed=seed))
    else:
        random_init(net, scheme, seed)
    return evaluate(net, test)


def test_sylvester_beats_random_init_before_training():
    chance = 1 / 3
    sylv = np.median([_initial_accuracy("sylvester", seed) for seed in SEEDS])
    best_random = 0.0
    for scheme in RANDOM_SCHEMES:
        acc = float(np.median([_initial_accuracy(scheme, seed) for seed in SEEDS]))
        assert abs(acc - chance) <= 0.10, scheme
        best_random = max(best_random, acc)
    assert sylv >= best_random + 0.15


def _final_accuracies(scheme, shot):
    setup = Setup(source=NOISY_BLOBS, scheme=scheme, init=InitConfig(per_class_samples=shot))
    cfg = TrainConfig(epochs=30)
    return np.median([run_training(setup, cfg, shot, seed)[0].final_accuracy for seed in SEEDS])


@pytest.mark.parametrize("shot", [10, 100])
def test_few_shot_training_not_worse(shot):
    assert _final_accuracies("sylvester", shot) >= _final_accuracies("he-uniform", shot) - 0.01


def test_few_shot_training_strictly_better_at_ten():
    assert _final_accuracies("sylvester", 10) > _final_accuracies("he-uniform", 10)


def test_sample_count_trend():
    counts = [5, 20, 100]
    setup = Setup(source=WIDE_BLOBS)
    runs = [bench_sample_counts(setup, counts, seed) for seed in SEEDS]
    assert all([row[1] for row in rows] == counts for rows in runs)
    seconds = np.median([[row[2] for row in rows] for rows in runs], axis=0)
    accs = np.median([[row[3] for row in rows] for rows in runs], axis=0)
    assert np.all(seconds[1:] >= seconds[:-1])
    assert np.all(accs[1:] >= accs[:-1])


def test_lambda_trend_on_initial_accuracy():
    setup = Setup(source=BLOBS)
    low = np.median([_sylvester_initial(setup, 0.01, seed) for seed in SEEDS])
    high = np.median([_sylvester_initial(setup, 1.0, seed) for seed in SEEDS])
    assert high >= low


def _sylvester_initial(setup, lam, seed):
    weighted = replace(setup, init=replace(setup.init, lam=lam))
    record, _ = run_training(weighted, TrainConfig(epochs=0), None, seed)
    return record.initial_accuracy


def test_cifar10_initial_ordering(cifar10_real):
    images, labels = read_cifar10_file(cifar10_real / "data_batch_1.bin")
    train = LabeledDataset(images, labels, 10, "cifar10")
    images, labels = read_cifar10_file(cifar10_real / "test_batch.bin")
    test = LabeledDataset(images[:2000], labels[:2000], 10, "cifar10")

    spec = NetworkSpec.from_architecture("small_cnn", train.image_dims, 10)
    subset = stratified_subset(train, 100, seed=0)
    sylv, _ = initialize(random_init(Network(spec), "he-uniform", 0), subset, InitConfig())
    rand = random_init(Network(spec), "he-uniform", 0)
    assert evaluate(sylv, test) > evaluate(rand, test)


@pytest.mark.parametrize(
    "command",
    [
        ["init"],
        ["train", "--epochs", "2", "--shot", "10", "--seeds", "0,1"],
        ["bench", "--counts", "5,20", "--reference"],
        ["sweep-lambda", "--lambdas", "0.1,10", "--epochs", "1"],
    ],
    ids=["init", "train", "bench", "sweep-lambda"],
)
def test_reruns_are_byte_identical(tmp_path, command):
    def run(tag):
        out = tmp_path / tag / "out.csv"
        argv = [*command, "--dataset", "blobs", "--per-class", "20", "--no-timing",
                "--overwrite", "--out", str(out)]
        assert main(argv) == 0
        return {p.name: p.read_bytes() for p in sorted(out.parent.iterdir())}

    first, second = run("a"), run("b")
    assert first and first == second
