from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np
import structlog

from sylvinit.core.errors import FormatError
from sylvinit.core.nnet import Network, NetworkSpec

log = structlog.get_logger(__name__)

MAGIC = b"SYLV"
VERSION = 1


def save_spec(spec: NetworkSpec, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(spec.to_dict(), indent=2))


def load_spec(path: str | Path) -> NetworkSpec:
    return NetworkSpec.from_dict(json.loads(Path(path).read_text()))


def save_params(net: Network, path: str | Path) -> None:
    """
    "SYLV", version u32, trainable layer count u32, then for every parameter:
    name length u32, utf-8 name, dims count u32, dims u32s, float64 data.
    All little-endian.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks: List[bytes] = [MAGIC, struct.pack("<II", VERSION, len(net.params))]
    for name, value in net.named_parameters():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))


def read_params(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a parameter file")
    try:
        version, layers = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(2 * layers):
            (length,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + length].decode("utf-8")
            pos += length
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            count = int(np.prod(dims))
            if pos + 8 * count > len(raw):
                raise FormatError(f"{path}: truncated data for {name}")
            out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims)
            pos += 8 * count
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header ({exc})") from exc
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def load_params(net: Network, path: str | Path, skip_mismatched: bool = False) -> Network:
    """
    Install saved parameters into net. With skip_mismatched, parameters that are
    missing or differently shaped (e.g. a classifier for another class count)
    keep their current values instead of raising.
    """
    saved = read_params(path)
    for name, current in list(net.named_parameters()):
        value = saved.get(name)
        if value is None or value.shape != current.shape:
            if not skip_mismatched:
                got = None if value is None else value.shape
                raise FormatError(f"{path}: parameter {name} has shape {got}, need {current.shape}")
            log.warning("parameter skipped", name=name,
                        saved=None if value is None else value.shape)
            continue
        net.set_parameter(name, value.astype(np.float64))
    net.reset_velocity()
    return net


def write_csv(
    path: str | Path, header: Sequence[str], rows: Iterable[Sequence], overwrite: bool = False
) -> None:
    """
    Append rows, writing the header only when the file is new or overwritten.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = overwrite or not path.exists() or path.stat().st_size == 0
    with path.open("w" if overwrite else "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(header)
        writer.writerows(rows)
