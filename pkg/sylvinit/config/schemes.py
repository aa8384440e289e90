from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Literal

Family = Literal["data", "uniform", "normal"]


@dataclass(frozen=True, slots=True)
class SchemeDef:
    id: str
    name: str
    family: Family
    description: str


@dataclass(frozen=True, slots=True)
class CodeDef:
    id: str
    name: str
    needs_labels: bool
    description: str


@dataclass(frozen=True, slots=True)
class DatasetDefaults:
    """
    Protocol defaults for a dataset: init subset size, and the epoch count and
    lr decay epochs used by full-scale runs.
    """
    id: str
    per_class: int
    decay_epochs: tuple[int, ...]
    epochs: int


SCHEMES: Dict[str, SchemeDef] = {
    "sylvester": SchemeDef(
        id="sylvester",
        name="Sylvester",
        family="data",
        description="Layer-wise solve of AW + WB = C on propagated activations.",
    ),
    "he-uniform": SchemeDef(
        id="he-uniform",
        name="He uniform",
        family="uniform",
        description="U(-sqrt(6/fan_in), sqrt(6/fan_in)).",
    ),
    "he-normal": SchemeDef(
        id="he-normal",
        name="He normal",
        family="normal",
        description="N(0, 2/fan_in).",
    ),
    "xavier-uniform": SchemeDef(
        id="xavier-uniform",
        name="Xavier uniform",
        family="uniform",
        description="U(-sqrt(6/(fan_in+fan_out)), sqrt(6/(fan_in+fan_out))).",
    ),
    "xavier-normal": SchemeDef(
        id="xavier-normal",
        name="Xavier normal",
        family="normal",
        description="N(0, 2/(fan_in+fan_out)).",
    ),
}

RANDOM_SCHEMES: List[str] = [s.id for s in SCHEMES.values() if s.family != "data"]


CODES: Dict[str, CodeDef] = {
    "pca": CodeDef(
        id="pca",
        name="Principal components",
        needs_labels=False,
        description="Projections of centered activations on the top covariance eigenvectors.",
    ),
    "onehot": CodeDef(
        id="onehot",
        name="One-hot",
        needs_labels=True,
        description="Class indicator rows; the default for the classifier layer.",
    ),
    "kmeans": CodeDef(
        id="kmeans",
        name="K-Means",
        needs_labels=False,
        description="Inner products with k-means++/Lloyd cluster centers.",
    ),
    "lda": CodeDef(
        id="lda",
        name="Fisher discriminant",
        needs_labels=True,
        description="Projections on the top generalized eigenvectors of (S_b, S_w).",
    ),
}


DATASET_DEFAULTS: Dict[str, DatasetDefaults] = {
    "cifar10": DatasetDefaults(
        id="cifar10", per_class=100, decay_epochs=(100, 150), epochs=200,
    ),
    "cifar100": DatasetDefaults(
        id="cifar100", per_class=10, decay_epochs=(80, 120), epochs=200,
    ),
    "blobs": DatasetDefaults(
        id="blobs", per_class=100, decay_epochs=(), epochs=30,
    ),
}


def registry_help(registry: Dict[str, SchemeDef] | Dict[str, CodeDef]) -> str:
    """
    One "id (name): description" clause per entry, for argparse help.
    """
    return "; ".join(f"{d.id} ({d.name}): {d.description}" for d in registry.values())
