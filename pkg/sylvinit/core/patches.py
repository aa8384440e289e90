from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from sylvinit.core.errors import LabelError, ParameterError, ShapeError
from sylvinit.core.matcore import Matrix

# (n, h, w, c) activations or (c_o, c_i, f_h, f_w) conv weights
Tensor4 = npt.NDArray[np.float64]


@dataclass(frozen=True, slots=True)
class PatchMatrix:
    """
    Flattened receptive fields, one per column, rows in (row, col, channel) order.
    """
    x: Matrix
    source_image: npt.NDArray[np.intp]
    labels: Optional[npt.NDArray[np.int64]] = None

    @property
    def n_patches(self) -> int:
        return self.x.shape[1]


def output_size(h: int, w: int, f_h: int, f_w: int, stride: int, pad: int) -> Tuple[int, int]:
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if f_h > h + 2 * pad or f_w > w + 2 * pad:
        raise ShapeError(f"filter {f_h}x{f_w} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    return (h + 2 * pad - f_h) // stride + 1, (w + 2 * pad - f_w) // stride + 1


def im2col(acts: Tensor4, f_h: int, f_w: int, stride: int, pad: int) -> Matrix:
    """
    (f_h*f_w*c) x (n*out_h*out_w); columns ordered image, output row, output col.
    """
    if acts.ndim != 4:
        raise ShapeError(f"expected (n, h, w, c) activations, got {acts.shape}")
    n, h, w, c = acts.shape
    out_h, out_w = output_size(h, w, f_h, f_w, stride, pad)

    img = np.pad(acts, [(0, 0), (pad, pad), (pad, pad), (0, 0)])
    col = np.empty((n, out_h, out_w, f_h, f_w, c))
    for y in range(f_h):
        y_max = y + stride * out_h
        for x in range(f_w):
            x_max = x + stride * out_w
            col[:, :, :, y, x, :] = img[:, y:y_max:stride, x:x_max:stride, :]
    return col.reshape(n * out_h * out_w, f_h * f_w * c).T


def col2im(
    cols: Matrix, shape: Tuple[int, int, int, int], f_h: int, f_w: int, stride: int, pad: int
) -> Tensor4:
    """
    Adjoint of im2col: scatter-add columns back onto an (n, h, w, c) grid.
    """
    n, h, w, c = shape
    out_h, out_w = output_size(h, w, f_h, f_w, stride, pad)
    col = cols.T.reshape(n, out_h, out_w, f_h, f_w, c)
    img = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    for y in range(f_h):
        y_max = y + stride * out_h
        for x in range(f_w):
            x_max = x + stride * out_w
            img[:, y:y_max:stride, x:x_max:stride, :] += col[:, :, :, y, x, :]
    return img[:, pad:pad + h, pad:pad + w, :]


def extract_patches(
    acts: Tensor4,
    f_h: int,
    f_w: int,
    stride: int,
    pad: int,
    labels: Optional[Sequence[int]] = None,
) -> PatchMatrix:
    x = im2col(acts, f_h, f_w, stride, pad)
    n = acts.shape[0]
    per_image = x.shape[1] // n if n else 0
    source = np.repeat(np.arange(n, dtype=np.intp), per_image)

    patch_labels = None
    if labels is not None:
        y = np.asarray(labels, dtype=np.int64)
        if y.size != n:
            raise LabelError(f"{y.size} labels for {n} images")
        patch_labels = y[source]

    return PatchMatrix(x=x, source_image=source, labels=patch_labels)


def sample_patches(pm: PatchMatrix, per_image: int, seed: int) -> PatchMatrix:
    """
    Keep min(per_image, available) random patches of every image, without
    replacement, in their original column order.
    """
    if per_image < 1:
        raise ParameterError(f"per_image must be >= 1, got {per_image}")
    rng = np.random.default_rng(seed)

    keep: List[np.ndarray] = []
    for img in np.unique(pm.source_image):
        idx = np.flatnonzero(pm.source_image == img)
        if idx.size > per_image:
            idx = np.sort(rng.choice(idx, size=per_image, replace=False))
        keep.append(idx)
    cols = np.concatenate(keep) if keep else np.zeros(0, dtype=np.intp)

    return PatchMatrix(
        x=pm.x[:, cols],
        source_image=pm.source_image[cols],
        labels=None if pm.labels is None else pm.labels[cols],
    )


def reshape_weight(w: Matrix, c_i: int, f_h: int, f_w: int) -> Tensor4:
    """
    c_o x (f_h*f_w*c_i) -> (c_o, c_i, f_h, f_w), undoing the patch flattening.
    """
    if w.ndim != 2 or w.shape[1] != f_h * f_w * c_i:
        raise ShapeError(f"weight {w.shape} does not flatten a {c_i}x{f_h}x{f_w} filter")
    return w.reshape(w.shape[0], f_h, f_w, c_i).transpose(0, 3, 1, 2).copy()


def flatten_weight(t: Tensor4) -> Matrix:
    if t.ndim != 4:
        raise ShapeError(f"expected (c_o, c_i, f_h, f_w) weight, got {t.shape}")
    return t.transpose(0, 2, 3, 1).reshape(t.shape[0], -1).copy()
