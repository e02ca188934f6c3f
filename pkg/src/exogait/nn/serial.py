"""Weight-bundle serialization.

File layout: magic bytes, u32 format version, u32 header length, a JSON
header (layer specs, input shape, model count, tensor manifest), then the
raw little-endian float64 tensors in manifest order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .layers import Sequential

MAGIC = b"EXGW"
FORMAT_VERSION = 1


class WeightsError(Exception):
    """Base class for weight-file problems."""


class CorruptWeightsError(WeightsError):
    """File is truncated or not a weight bundle."""


class WeightsVersionError(WeightsError):
    """File uses an unsupported format version."""


class WeightsShapeError(WeightsError):
    """Stored tensors do not match the expected architecture."""


def save_weights(model: Sequential, path):
    named = model.parameters()
    header = {
        "layer_specs": model.layer_specs,
        "input_shape": list(model.input_shape),
        "m_models": model.m_models,
        "tensors": [{"name": n, "shape": list(p.shape)} for n, p in named],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for _, p in named:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def _read_header(fh, path):
    magic = fh.read(4)
    if magic != MAGIC:
        raise CorruptWeightsError(f"{path}: not a weight bundle")
    raw = fh.read(8)
    if len(raw) != 8:
        raise CorruptWeightsError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", raw)
    if version != FORMAT_VERSION:
        raise WeightsVersionError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}")
    blob = fh.read(hlen)
    if len(blob) != hlen:
        raise CorruptWeightsError(f"{path}: truncated header")
    try:
        return json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptWeightsError(f"{path}: unreadable header ({exc})") from exc


def _read_tensors(fh, header, path):
    tensors = []
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise CorruptWeightsError(f"{path}: truncated tensor {entry['name']}")
        tensors.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    if fh.read(1):
        raise CorruptWeightsError(f"{path}: trailing bytes after last tensor")
    return tensors


def load_weights(model: Sequential, path):
    """Load tensors into an existing model; specs and shapes must match."""
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        if header["layer_specs"] != model.layer_specs:
            raise WeightsShapeError(f"{path}: layer-spec chain differs from model")
        named = model.parameters()
        if [t["name"] for t in header["tensors"]] != [n for n, _ in named]:
            raise WeightsShapeError(f"{path}: tensor manifest differs from model")
        for entry, (name, p) in zip(header["tensors"], named):
            if tuple(entry["shape"]) != p.shape:
                raise WeightsShapeError(
                    f"{path}: tensor {name} has shape {entry['shape']}, "
                    f"expected {list(p.shape)}")
        tensors = _read_tensors(fh, header, path)
    model.set_parameters(tensors)
    return model


def load_model(path) -> Sequential:
    """Rebuild a model from a weight bundle alone."""
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        tensors = _read_tensors(fh, header, path)
    model = Sequential(header["layer_specs"], header["input_shape"],
                       header["m_models"])
    names = [n for n, _ in model.parameters()]
    if names != [t["name"] for t in header["tensors"]]:
        raise WeightsShapeError(f"{path}: tensor manifest does not match specs")
    try:
        model.set_parameters(tensors)
    except Exception as exc:
        raise WeightsShapeError(f"{path}: {exc}") from exc
    return model
