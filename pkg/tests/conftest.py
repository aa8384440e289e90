from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from sylvinit.core.dataio import LabeledDataset, synth_blobs
from sylvinit.core.nnet import LayerSpec, Network, NetworkSpec


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def blobs() -> LabeledDataset:
    return synth_blobs(classes=3, side=6, channels=1, per_class=20, spread=0.1, seed=0)


@pytest.fixture
def blobs_test() -> LabeledDataset:
    return synth_blobs(classes=3, side=6, channels=1, per_class=20, spread=0.1, seed=0,
                       split="test")


def tiny_cnn_spec(dims=(6, 6, 1), num_classes=3) -> NetworkSpec:
    return NetworkSpec(
        input_dims=dims,
        layers=(
            LayerSpec("conv2d", "conv1", out=4, f_h=3, f_w=3, stride=1, pad=1),
            LayerSpec("relu", "relu1"),
            LayerSpec("conv2d", "conv2", out=5, f_h=3, f_w=3, stride=2, pad=1),
            LayerSpec("relu", "relu2"),
            LayerSpec("global_avg_pool", "pool"),
            LayerSpec("dense", "final_dense", out=num_classes),
        ),
        num_classes=num_classes,
    )


@pytest.fixture
def tiny_cnn() -> Network:
    return Network(tiny_cnn_spec())


def cifar10_record(label: int, pixels: np.ndarray) -> bytes:
    """
    pixels is (32, 32, 3) uint8; written as R, G, B planes.
    """
    return bytes([label]) + pixels.transpose(2, 0, 1).tobytes()


def cifar100_record(coarse: int, fine: int, pixels: np.ndarray) -> bytes:
    return bytes([coarse, fine]) + pixels.transpose(2, 0, 1).tobytes()


@pytest.fixture
def cifar10_dir(tmp_path: Path, rng: np.random.Generator) -> Path:
    root = tmp_path / "cifar10"
    root.mkdir()
    for name, labels in (("data_batch_1.bin", [3, 7]), ("test_batch.bin", [1])):
        recs = [
            cifar10_record(y, rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)) for y in labels
        ]
        (root / name).write_bytes(b"".join(recs))
    return root


@pytest.fixture
def cifar100_dir(tmp_path: Path, rng: np.random.Generator) -> Path:
    root = tmp_path / "cifar100"
    root.mkdir()
    px = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    (root / "train.bin").write_bytes(cifar100_record(4, 42, px))
    (root / "test.bin").write_bytes(b"")
    return root


@pytest.fixture
def cifar10_real() -> Path:
    root = os.environ.get("SYLVINIT_DATA_DIR")
    if not root or not (Path(root) / "data_batch_1.bin").exists():
        pytest.skip("CIFAR-10 binaries not available")
    return Path(root)
