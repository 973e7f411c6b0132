"""Byte-stable model container.

Layout: 8-byte magic, uint32 little-endian header length, a UTF-8 JSON
header with sorted keys (model kind, layer specs, input shape, metadata,
parameter names and shapes), then the parameters as little-endian float64
in C order, concatenated in the header's order (names sorted). No
timestamps or environment details go in, so saving the same model twice
yields identical bytes.

Metadata must be JSON-representable; numpy arrays and scalars in it are
converted to lists/floats on save and come back as such on load.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .layers import FC, GRU, Conv2D, Flatten, MaxPool, Output
from .network import Network

MAGIC = b"MAGMODL1"
FORMAT_VERSION = 1

_SPEC_TYPES = {cls.__name__: cls for cls in (Conv2D, MaxPool, Flatten, FC, GRU, Output)}


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _encode_specs(specs) -> list:
    return [[type(s).__name__, _jsonable(dataclasses.asdict(s))] for s in specs]


def _decode_specs(raw) -> tuple:
    out = []
    for name, kwargs in raw:
        if name not in _SPEC_TYPES:
            raise DataError(f"unknown layer spec {name!r} in model file")
        out.append(_SPEC_TYPES[name](**kwargs))
    return tuple(out)


@dataclass
class ModelFile:
    kind: str
    specs: tuple
    input_shape: tuple
    params: dict[str, np.ndarray]
    meta: dict

    def build_network(self) -> Network:
        net = Network(self.specs, self.input_shape, seed=0)
        net.set_params(self.params)
        return net


def save_model(path, kind: str, specs, input_shape, params: dict[str, np.ndarray],
               meta: dict | None = None) -> None:
    names = sorted(params)
    header = {
        "format": FORMAT_VERSION,
        "kind": kind,
        "spec": _encode_specs(specs),
        "input_shape": [int(d) for d in input_shape],
        "meta": _jsonable(meta or {}),
        "params": [{"name": n, "shape": [int(d) for d in params[n].shape]} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_model(path) -> ModelFile:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not a model file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: corrupt model header: {exc}") from None
        if header.get("format") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported model format {header.get('format')}")
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(n * 8)
            if len(raw) != n * 8:
                raise DataError(f"{path}: truncated parameter {entry['name']}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise DataError(f"{path}: trailing bytes after parameters")
    return ModelFile(
        kind=header["kind"],
        specs=_decode_specs(header["spec"]),
        input_shape=tuple(header["input_shape"]),
        params=params,
        meta=header["meta"],
    )
