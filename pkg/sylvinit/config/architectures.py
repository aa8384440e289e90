from __future__ import annotations

from typing import Callable, Dict, Tuple

Dims = Tuple[int, int, int]


def _conv(name: str, out: int, stride: int) -> dict:
    return {
        "kind": "conv2d", "name": name, "out": out, "f_h": 3, "f_w": 3, "stride": stride, "pad": 1,
    }


def small_cnn(input_dims: Dims, num_classes: int) -> dict:
    """
    Conv(16,3x3,s1,p1)-ReLU-Conv(32,3x3,s2,p1)-ReLU-Conv(64,3x3,s2,p1)-ReLU-GAP-Dense.

    Same conv-stack shape as a residual backbone, minus batch norm and skips.
    """
    return {
        "input_dims": list(input_dims),
        "num_classes": num_classes,
        "layers": [
            _conv("conv1", 16, 1),
            {"kind": "relu", "name": "relu1"},
            _conv("conv2", 32, 2),
            {"kind": "relu", "name": "relu2"},
            _conv("conv3", 64, 2),
            {"kind": "relu", "name": "relu3"},
            {"kind": "global_avg_pool", "name": "pool"},
            {"kind": "dense", "name": "final_dense", "out": num_classes},
        ],
    }


def linear(input_dims: Dims, num_classes: int) -> dict:
    return {
        "input_dims": list(input_dims),
        "num_classes": num_classes,
        "layers": [
            {"kind": "flatten", "name": "flatten"},
            {"kind": "dense", "name": "final_dense", "out": num_classes},
        ],
    }


def mlp(input_dims: Dims, num_classes: int) -> dict:
    return {
        "input_dims": list(input_dims),
        "num_classes": num_classes,
        "layers": [
            {"kind": "flatten", "name": "flatten"},
            {"kind": "dense", "name": "hidden", "out": 64},
            {"kind": "relu", "name": "relu1"},
            {"kind": "dense", "name": "final_dense", "out": num_classes},
        ],
    }


ARCHITECTURES: Dict[str, Callable[[Dims, int], dict]] = {
    "small_cnn": small_cnn,
    "linear": linear,
    "mlp": mlp,
}
