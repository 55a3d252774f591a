# app/core/serialization.py
"""Binary model container.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"CBMF"
    4       2     format version (uint16), currently 1
    6       4     header length H (uint32)
    10      H     header, UTF-8 JSON (sorted keys)
    10+H    P     array payload, concatenated raw little-endian buffers
    10+H+P  4     CRC-32 of bytes [0, 10+H+P) (uint32)

The header holds ``format_version``, ``kind``, ``schema_hash``,
``hyperparameters``, ``metadata`` and an ``arrays`` list of
``{name, dtype, shape, offset, nbytes}`` entries with offsets relative to
the payload start. Array names are ``param/<name>``, ``normalizer/mean``,
``normalizer/std`` and ``mask``.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Dict, Union

import numpy as np
import orjson

from app.core.errors import FormatError
from app.core.features import Normalizer
from app.core.predictors import ModelKind, TrainedModel

MAGIC = b"CBMF"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_CRC = struct.Struct("<I")


def _little_endian(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    return np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))


def _named_arrays(model: TrainedModel) -> Dict[str, np.ndarray]:
    out = {f"param/{k}": v for k, v in sorted(model.arrays.items())}
    out["normalizer/mean"] = model.normalizer.mean
    out["normalizer/std"] = model.normalizer.std
    out["mask"] = model.mask
    return out


def serialize(model: TrainedModel) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, array in _named_arrays(model).items():
        buf = _little_endian(array)
        raw = buf.tobytes()
        entries.append({
            "name": name,
            "dtype": buf.dtype.str,
            "shape": list(buf.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)

    header = orjson.dumps(
        {
            "format_version": FORMAT_VERSION,
            "kind": model.kind.value,
            "schema_hash": model.schema_hash,
            "hyperparameters": model.hyperparameters,
            "metadata": model.metadata,
            "arrays": entries,
        },
        option=orjson.OPT_SORT_KEYS,
    )
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    return body + _CRC.pack(zlib.crc32(body))


def deserialize(data: bytes) -> TrainedModel:
    data = bytes(data)
    if len(data) < _PREFIX.size + _CRC.size:
        raise FormatError("model file is truncated")
    magic, version, header_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}, expected {FORMAT_VERSION}")
    body, (crc,) = data[:-_CRC.size], _CRC.unpack_from(data, len(data) - _CRC.size)
    if zlib.crc32(body) != crc:
        raise FormatError("model file checksum mismatch (truncated or corrupted)")

    payload_start = _PREFIX.size + header_len
    if payload_start > len(body):
        raise FormatError("model header runs past the end of the file")
    try:
        header = orjson.loads(body[_PREFIX.size:payload_start])
        kind = ModelKind.parse(header["kind"])
        arrays = {}
        for entry in header["arrays"]:
            start = payload_start + int(entry["offset"])
            stop = start + int(entry["nbytes"])
            if stop > len(body):
                raise FormatError(f"array {entry['name']!r} runs past the payload")
            flat = np.frombuffer(body[start:stop], dtype=np.dtype(entry["dtype"]))
            arrays[entry["name"]] = flat.reshape(entry["shape"]).copy()
        params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
        normalizer = Normalizer(mean=arrays["normalizer/mean"], std=arrays["normalizer/std"])
        mask = arrays["mask"].astype(bool)
        return TrainedModel(
            kind=kind,
            arrays=params,
            normalizer=normalizer,
            mask=mask,
            schema_hash=header["schema_hash"],
            hyperparameters=header["hyperparameters"],
            metadata=header["metadata"],
        )
    except FormatError:
        raise
    except (orjson.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed model header ({e})") from e


def save_model(model: TrainedModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize(model))
    return path


def load_model(path: Union[str, Path]) -> TrainedModel:
    return deserialize(Path(path).read_bytes())
