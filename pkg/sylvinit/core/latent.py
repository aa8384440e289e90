from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import structlog

from sylvinit.config.constants import (
    KMEANS_MAX_ITERS,
    KMEANS_TOL,
    LDA_RIDGE,
    PAD_SCALE,
    RANK_TOL,
)
from sylvinit.config.schemes import CODES
from sylvinit.core.errors import (
    ConfigurationError,
    DegenerateLabelsError,
    InsufficientDataError,
    LabelError,
    ParameterError,
)
from sylvinit.core.matcore import Matrix, gram, sym_eig

log = structlog.get_logger(__name__)


class CodeKind(str, Enum):
    PCA = "pca"
    ONE_HOT = "onehot"
    KMEANS = "kmeans"
    LDA = "lda"

    @property
    def needs_labels(self) -> bool:
        return CODES[self.value].needs_labels


@dataclass(frozen=True, slots=True)
class LatentCodeSpec:
    """
    Which code to build for a layer. seed None lets the init driver derive
    one from the run seed and layer index.
    """
    kind: CodeKind = CodeKind.PCA
    seed: Optional[int] = None
    kmeans_max_iters: int = KMEANS_MAX_ITERS
    kmeans_tol: float = KMEANS_TOL

    def __post_init__(self):
        object.__setattr__(self, "kind", CodeKind(self.kind))
        if self.kmeans_max_iters < 1:
            raise ParameterError("kmeans_max_iters must be >= 1")
        if self.kmeans_tol < 0:
            raise ParameterError("kmeans_tol must be >= 0")

    @property
    def rng_seed(self) -> int:
        return 0 if self.seed is None else self.seed

    def with_seed(self, seed: int) -> "LatentCodeSpec":
        return LatentCodeSpec(self.kind, seed, self.kmeans_max_iters, self.kmeans_tol)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "seed": self.seed,
            "kmeans_max_iters": self.kmeans_max_iters,
            "kmeans_tol": self.kmeans_tol,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LatentCodeSpec":
        return cls(
            kind=CodeKind(data["kind"]),
            seed=data.get("seed"),
            kmeans_max_iters=data.get("kmeans_max_iters", KMEANS_MAX_ITERS),
            kmeans_tol=data.get("kmeans_tol", KMEANS_TOL),
        )


@dataclass(slots=True)
class KMeansResult:
    centers: Matrix  # d_i x k
    assignments: npt.NDArray[np.intp]
    inertia: float
    history: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.history)


def _center(x: Matrix) -> Tuple[Matrix, Matrix]:
    mean = x.mean(axis=1, keepdims=True)
    return x - mean, mean


def _pad_rows(xc: Matrix, count: int, ref_std: float, seed: int) -> Matrix:
    """
    Rows of projections onto seeded random unit directions, each rescaled to
    PAD_SCALE * ref_std.
    """
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((xc.shape[0], count))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=0, keepdims=True), np.finfo(np.float64).tiny)
    rows = dirs.T @ xc
    std = rows.std(axis=1, keepdims=True)
    scale = np.divide(PAD_SCALE * ref_std, std, out=np.zeros_like(std), where=std > 0)
    return rows * scale


def _fallback_std(xc: Matrix) -> float:
    return float(np.sqrt(np.mean(xc.var(axis=1)))) if xc.size else 0.0


def _with_padding(
    xc: Matrix, basis: Matrix, d_o: int, seed: int, what: str
) -> Matrix:
    s = basis.T @ xc
    missing = d_o - basis.shape[1]
    if missing <= 0:
        return s
    ref = float(s.std(axis=1).min()) if s.shape[0] else _fallback_std(xc)
    log.info("padding latent rows", code=what, kept=basis.shape[1], padded=missing)
    return np.vstack([s, _pad_rows(xc, missing, ref, seed)])


def principal_directions(x: Matrix, k: int) -> Tuple[Matrix, npt.NDArray[np.float64]]:
    """
    Top-k (at most) covariance eigenvectors of the columns of x and their
    variances. Directions with numerically zero variance are dropped.
    """
    n = x.shape[1]
    if n < 2:
        raise InsufficientDataError(f"pca needs at least 2 samples, got {n}")
    xc, _ = _center(x)
    eig = sym_eig(gram(xc) / (n - 1))
    k = min(k, x.shape[0], n - 1)
    vals = eig.eigenvalues[:k]
    top = eig.eigenvalues[0] if eig.eigenvalues.size else 0.0
    keep = int(np.count_nonzero(vals > RANK_TOL * top)) if top > 0 else 0
    return eig.eigenvectors[:, :keep], vals[:keep]


def pca_code(x: Matrix, d_o: int, seed: int = 0) -> Matrix:
    if d_o < 1:
        raise ParameterError(f"d_o must be >= 1, got {d_o}")
    basis, _ = principal_directions(x, d_o)
    xc, _ = _center(x)
    return _with_padding(xc, basis, d_o, seed, "pca")


def one_hot_code(labels: Sequence[int], num_classes: int) -> Matrix:
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        bad = y[(y < 0) | (y >= num_classes)][0]
        raise LabelError(f"label {bad} outside [0, {num_classes})")
    s = np.zeros((num_classes, y.size))
    s[y, np.arange(y.size)] = 1.0
    return s


def _sq_dists(points: Matrix, centers: Matrix) -> Matrix:
    """
    n x k squared distances between columns of points and columns of centers.
    """
    d = (
        np.sum(points * points, axis=0)[:, None]
        - 2.0 * points.T @ centers
        + np.sum(centers * centers, axis=0)[None, :]
    )
    return np.maximum(d, 0.0)


def _kmeans_pp(points: Matrix, k: int, rng: np.random.Generator) -> Matrix:
    n = points.shape[1]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(points, points[:, chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point sits on a center already
            idx = int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(points, points[:, [idx]]).ravel())
    return points[:, chosen].copy()


def kmeans(points: Matrix, k: int, spec: LatentCodeSpec) -> KMeansResult:
    """
    k-means++ seeding then Lloyd iterations over the columns of points.

    Stops when the relative inertia change is at most spec.kmeans_tol or after
    spec.kmeans_max_iters assignments. An emptied cluster takes the point
    farthest from its current center.
    """
    n = points.shape[1]
    if n < k:
        raise InsufficientDataError(f"k-means needs at least {k} samples, got {n}")
    rng = np.random.default_rng(spec.rng_seed)
    centers = _kmeans_pp(points, k, rng)

    history: List[float] = []
    assign = np.zeros(n, dtype=np.intp)
    for it in range(spec.kmeans_max_iters):
        d = _sq_dists(points, centers)
        assign = np.argmin(d, axis=1)
        inertia = float(d[np.arange(n), assign].sum())
        prev = history[-1] if history else None
        history.append(inertia)
        if inertia == 0.0 or it == spec.kmeans_max_iters - 1:
            break
        if prev is not None and prev - inertia <= spec.kmeans_tol * prev:
            break

        counts = np.bincount(assign, minlength=k)
        sums = points @ np.eye(k)[assign]
        centers = np.where(counts > 0, sums / np.maximum(counts, 1), centers)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(_sq_dists(points, centers)[np.arange(n), assign]))
            counts[assign[far]] -= 1
            assign[far] = j
            counts[j] = 1
            centers[:, j] = points[:, far]

    return KMeansResult(centers=centers, assignments=assign, inertia=history[-1], history=history)


def kmeans_code(x: Matrix, d_o: int, spec: LatentCodeSpec) -> Matrix:
    """
    S = Hᵀ X with H the d_o cluster centers of the activation columns.
    """
    result = kmeans(x, d_o, spec)
    log.debug("kmeans done", k=d_o, iterations=result.iterations, inertia=result.inertia)
    return result.centers.T @ x


def discriminant_directions(
    x: Matrix, labels: Sequence[int], k: int
) -> Tuple[Matrix, npt.NDArray[np.float64]]:
    """
    Unit-norm Fisher directions: top eigenvectors of S_w^-1 S_b, computed through
    the whitened symmetric problem S_w^-1/2 S_b S_w^-1/2. At most classes - 1.
    """
    y = np.asarray(labels)
    if y.size != x.shape[1]:
        raise LabelError(f"{y.size} labels for {x.shape[1]} samples")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise DegenerateLabelsError("lda needs at least two classes")
    if counts.min() < 2:
        raise InsufficientDataError(
            f"class {classes[np.argmin(counts)]} has {counts.min()} sample; lda needs 2"
        )

    d_i = x.shape[0]
    mean = x.mean(axis=1, keepdims=True)
    sw = np.zeros((d_i, d_i))
    sb = np.zeros((d_i, d_i))
    for c, nc in zip(classes, counts):
        xc = x[:, y == c]
        mc = xc.mean(axis=1, keepdims=True)
        sw += gram(xc - mc)
        sb += nc * gram(mc - mean)

    tr = float(np.trace(sw))
    sw += (LDA_RIDGE * tr / d_i if tr > 0 else LDA_RIDGE) * np.eye(d_i)

    ew = sym_eig(sw)
    white = ew.reconstruct(lambda w: 1.0 / np.sqrt(w))
    em = sym_eig(white @ sb @ white)

    k = min(k, classes.size - 1, d_i)
    vals = em.eigenvalues[:k]
    top = em.eigenvalues[0]
    keep = int(np.count_nonzero(vals > RANK_TOL * top)) if top > 0 else 0
    dirs = white @ em.eigenvectors[:, :keep]
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    return dirs, vals[:keep]


def lda_code(x: Matrix, labels: Sequence[int], d_o: int, seed: int = 0) -> Matrix:
    if d_o < 1:
        raise ParameterError(f"d_o must be >= 1, got {d_o}")
    dirs, _ = discriminant_directions(x, labels, d_o)
    xc, _ = _center(x)
    return _with_padding(xc, dirs, d_o, seed, "lda")


def build_code(
    spec: LatentCodeSpec,
    x: Matrix,
    d_o: int,
    labels: Optional[Sequence[int]] = None,
    num_classes: Optional[int] = None,
) -> Matrix:
    if spec.kind.needs_labels and labels is None:
        raise ConfigurationError(f"{spec.kind.value} code needs labels")

    if spec.kind is CodeKind.PCA:
        return pca_code(x, d_o, seed=spec.rng_seed)
    if spec.kind is CodeKind.ONE_HOT:
        if num_classes is None or d_o != num_classes:
            raise ConfigurationError(
                f"one-hot code has {num_classes} rows but the layer outputs {d_o}"
            )
        return one_hot_code(labels, num_classes)
    if spec.kind is CodeKind.KMEANS:
        return kmeans_code(x, d_o, spec)
    return lda_code(x, labels, d_o, seed=spec.rng_seed)
