from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Sequence

import numpy as np
import numpy.typing as npt
import structlog

from sylvinit.config.constants import (
    BLOB_CHANNELS,
    BLOB_CLASSES,
    BLOB_PER_CLASS,
    BLOB_SIDE,
    BLOB_SPREAD,
)
from sylvinit.core.errors import FormatError, LabelError, ParameterError, ShapeError
from sylvinit.core.patches import Tensor4

log = structlog.get_logger(__name__)

Split = Literal["train", "test"]

CIFAR_SIDE = 32
CIFAR_PIXELS = CIFAR_SIDE * CIFAR_SIDE * 3
CIFAR10_RECORD = 1 + CIFAR_PIXELS
CIFAR100_RECORD = 2 + CIFAR_PIXELS

CIFAR10_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR10_TEST_FILES = ["test_batch.bin"]

_SPLIT_STREAM = {"train": 0, "test": 1}


@dataclass(frozen=True, slots=True)
class LabeledDataset:
    """
    Images (n, h, w, c) scaled to [0, 1] with integer class labels.
    """
    images: Tensor4
    labels: npt.NDArray[np.int64]
    num_classes: int
    name: str

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ShapeError(f"images must be (n, h, w, c), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ShapeError(f"{self.labels.shape} labels for {self.images.shape[0]} images")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelError(f"labels outside [0, {self.num_classes}) in {self.name}")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_dims(self) -> tuple[int, int, int]:
        _, h, w, c = self.images.shape
        return h, w, c

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(
            images=self.images[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            name=self.name,
        )


def _read_records(path: Path, record: int) -> np.ndarray:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % record:
        raise FormatError(f"{path}: {raw.size} bytes is not a multiple of {record}-byte records")
    return raw.reshape(-1, record)


def _pixels(records: np.ndarray) -> Tensor4:
    # stored as 1024 R, 1024 G, 1024 B, each row-major 32x32
    planes = records.reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1)
    return planes.astype(np.float64) / 255.0


def read_cifar10_file(path: Path) -> tuple[Tensor4, npt.NDArray[np.int64]]:
    recs = _read_records(path, CIFAR10_RECORD)
    labels = recs[:, 0].astype(np.int64)
    if labels.size and labels.max() >= 10:
        raise FormatError(f"{path}: label {labels.max()} is not a CIFAR-10 class")
    return _pixels(recs[:, 1:]), labels


def read_cifar100_file(path: Path) -> tuple[Tensor4, npt.NDArray[np.int64]]:
    recs = _read_records(path, CIFAR100_RECORD)
    labels = recs[:, 1].astype(np.int64)
    if labels.size and labels.max() >= 100:
        raise FormatError(f"{path}: fine label {labels.max()} is not a CIFAR-100 class")
    return _pixels(recs[:, 2:]), labels


def load_cifar10(dir_path: str | Path, split: Split = "train") -> LabeledDataset:
    """
    Reads data_batch_1..5.bin (train) or test_batch.bin (test). Train loads
    whichever batch files are present but needs at least one.
    """
    root = Path(dir_path)
    names = CIFAR10_TRAIN_FILES if split == "train" else CIFAR10_TEST_FILES
    paths = [root / name for name in names if (root / name).exists()]
    if not paths:
        raise FileNotFoundError(f"no CIFAR-10 {split} files ({', '.join(names)}) in {root}")

    images: List[Tensor4] = []
    labels: List[np.ndarray] = []
    for p in paths:
        x, y = read_cifar10_file(p)
        images.append(x)
        labels.append(y)

    ds = LabeledDataset(
        images=np.concatenate(images),
        labels=np.concatenate(labels),
        num_classes=10,
        name="cifar10",
    )
    log.info("cifar10 loaded", split=split, files=len(paths), n=len(ds))
    return ds


def load_cifar100(dir_path: str | Path, split: Split = "train") -> LabeledDataset:
    path = Path(dir_path) / f"{split}.bin"
    if not path.exists():
        raise FileNotFoundError(f"missing CIFAR-100 file {path}")
    x, y = read_cifar100_file(path)
    ds = LabeledDataset(images=x, labels=y, num_classes=100, name="cifar100")
    log.info("cifar100 loaded", split=split, n=len(ds))
    return ds


def synth_blobs(
    classes: int = BLOB_CLASSES,
    side: int = BLOB_SIDE,
    channels: int = BLOB_CHANNELS,
    per_class: int = BLOB_PER_CLASS,
    spread: float = BLOB_SPREAD,
    seed: int = 0,
    split: Split = "train",
) -> LabeledDataset:
    """
    Class c = seeded uniform prototype + spread * Gaussian noise, clamped to [0, 1].

    Prototypes depend on seed only, so train and test splits of the same seed
    share them and differ in noise.
    """
    if classes < 2:
        raise ParameterError(f"synth_blobs needs at least 2 classes, got {classes}")
    if per_class < 0 or spread < 0:
        raise ParameterError("per_class and spread must be non-negative")

    proto_rng = np.random.default_rng(np.random.SeedSequence(seed))
    protos = proto_rng.uniform(0.0, 1.0, size=(classes, side, side, channels))

    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_STREAM[split]]))
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    noise = noise_rng.standard_normal((labels.size, side, side, channels))
    images = np.clip(protos[labels] + spread * noise, 0.0, 1.0)

    return LabeledDataset(images=images, labels=labels, num_classes=classes, name="blobs")


def load_dataset(
    name: str,
    data_dir: Optional[str | Path] = None,
    split: Split = "train",
    seed: int = 0,
    **blob_args,
) -> LabeledDataset:
    if name == "blobs":
        return synth_blobs(seed=seed, split=split, **blob_args)
    if data_dir is None:
        raise FileNotFoundError(f"{name} needs a data directory")
    if name == "cifar10":
        return load_cifar10(data_dir, split)
    if name == "cifar100":
        return load_cifar100(data_dir, split)
    raise ParameterError(f"unknown dataset {name!r}")
