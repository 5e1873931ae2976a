"""Model container: magic, JSON header length, JSON header, float32 payload."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import CnnConfig, CnnModel

MAGIC = b"SRDTICNN"
FORMAT_VERSION = 1


class ModelFormatError(IOError):
    pass


def save_model(model: CnnModel, path) -> None:
    params = model.parameters()
    header = {
        "format_version": FORMAT_VERSION,
        "endianness": "little",
        "dtype": "float32",
        "config": model.config.to_dict(),
        "parameters": [{"name": n, "shape": list(p.shape)} for n, p in zip(model.parameter_names(), params)],
        "parameter_count": int(sum(p.size for p in params)),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.asarray(p, dtype="<f4").tobytes(order="C"))


def load_model(path) -> CnnModel:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise ModelFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: unreadable header ({exc})") from None
    pos += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {header.get('format_version')}")
    if header.get("endianness") != "little" or header.get("dtype") != "float32":
        raise ModelFormatError(f"{path}: unsupported payload encoding")
    try:
        config = CnnConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: invalid architecture ({exc})") from None

    expected = []
    for shape in config.layer_shapes():
        expected += [list(shape), [shape[0]]]
    declared = [p["shape"] for p in header.get("parameters", [])]
    if declared != expected:
        raise ModelFormatError(f"{path}: declared parameter shapes do not match the architecture")
    count = int(sum(np.prod(s) for s in expected))
    if header.get("parameter_count") != count:
        raise ModelFormatError(f"{path}: parameter count {header.get('parameter_count')} != {count}")
    if len(raw) - pos != 4 * count:
        raise ModelFormatError(f"{path}: payload has {len(raw) - pos} bytes, expected {4 * count}")

    flat = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).astype(np.float32)
    params, off = [], 0
    for shape in expected:
        size = int(np.prod(shape))
        params.append(flat[off:off + size].reshape(shape).copy())
        off += size
    return CnnModel(config, params[0::2], params[1::2])
