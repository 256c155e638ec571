"""Model files and training-set records.

A model file is a YAML header (configuration plus tensor names and shapes), a terminator line,
then every tensor as little-endian float64 in header order. A training-set file is a sequence
of records: label byte, uint32 point count, packed float32 xyz.
"""

from __future__ import annotations

import struct
from collections.abc import Iterable
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from lidar_proposals.classify.network import ClassifierConfig, ClassifierModel
from lidar_proposals.classify.training import Sample
from lidar_proposals.core import ObjectClass
from lidar_proposals.errors import FormatError

MAGIC = "lidar-proposals-model"
VERSION = 1
_END = b"\n---end-header---\n"
_RECORD_HEAD = struct.Struct("<BI")
_FLOAT = np.dtype("<f8")


def save_model(path: str | Path, model: ClassifierModel) -> None:
    tensors = [("param", k, v) for k, v in model.params.items()] + [("buffer", k, v) for k, v in model.buffers.items()]
    header = {
        "format": MAGIC,
        "version": VERSION,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(model.config).items()},
        "tensors": [{"kind": kind, "name": name, "shape": list(array.shape)} for kind, name, array in tensors],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(yaml.safe_dump(header, sort_keys=False).encode("utf-8").rstrip(b"\n"))
        fh.write(_END)
        for _, _, array in tensors:
            fh.write(np.ascontiguousarray(array, dtype=_FLOAT).tobytes())


def load_model(path: str | Path) -> ClassifierModel:
    raw = Path(path).read_bytes()
    cut = raw.find(_END)
    if cut < 0:
        raise FormatError(f"{path}: missing model header")
    try:
        header = yaml.safe_load(raw[:cut].decode("utf-8"))
    except (UnicodeDecodeError, yaml.YAMLError) as exc:
        raise FormatError(f"{path}: unreadable model header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != MAGIC:
        raise FormatError(f"{path}: not a model file")
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported model version {header.get('version')}")

    config = ClassifierConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in header["config"].items()})
    model = ClassifierModel(config)
    body = memoryview(raw)[cut + len(_END) :]
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * _FLOAT.itemsize
        if offset + size > len(body):
            raise FormatError(f"{path}: truncated at tensor {entry['name']}")
        array = np.frombuffer(body[offset : offset + size], dtype=_FLOAT).reshape(shape).astype(np.float64)
        offset += size
        target = model.params if entry["kind"] == "param" else model.buffers
        target[entry["name"]] = array
    if offset != len(body):
        raise FormatError(f"{path}: {len(body) - offset} trailing bytes")
    return model


def save_samples(path: str | Path, samples: Iterable[Sample]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("wb") as fh:
        for sample in samples:
            points = np.asarray(sample.points, dtype="<f4").reshape(-1, 3)
            fh.write(_RECORD_HEAD.pack(int(sample.label), len(points)))
            fh.write(points.tobytes())
            count += 1
    return count


def load_samples(path: str | Path) -> list[Sample]:
    raw = Path(path).read_bytes()
    samples = []
    offset = 0
    while offset < len(raw):
        if offset + _RECORD_HEAD.size > len(raw):
            raise FormatError(f"{path}: truncated record header at byte {offset}")
        label, n = _RECORD_HEAD.unpack_from(raw, offset)
        offset += _RECORD_HEAD.size
        size = n * 12
        if offset + size > len(raw):
            raise FormatError(f"{path}: truncated record at byte {offset}")
        try:
            cls = ObjectClass(label)
        except ValueError as exc:
            raise FormatError(f"{path}: bad label {label}") from exc
        points = np.frombuffer(raw, dtype="<f4", count=n * 3, offset=offset).reshape(n, 3).astype(np.float64)
        samples.append(Sample(points=points, label=cls))
        offset += size
    return samples
