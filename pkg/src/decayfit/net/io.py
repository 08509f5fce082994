"""Weight file persistence.

Layout: uint32 little-endian header length, UTF-8 JSON header, then every
parameter array as little-endian float32 in topology order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .model import NetworkParameters, NetworkTopology

FORMAT_NAME = "decayfit-weights"
FORMAT_VERSION = 1


def save_weights(params: NetworkParameters, path) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "topology": params.topology.to_dict(),
        "norm_factor": float(params.norm_factor),
        "layers": [[name, list(shape)] for name, shape in params.topology.layer_shapes()],
        "meta": params.meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in params.arrays.values())
    with open(Path(path), "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_weights(path) -> NetworkParameters:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read weight file {path}: {exc}") from exc
    if len(data) < 4:
        raise FormatError(f"{path}: missing header")
    (size,) = struct.unpack("<I", data[:4])
    if 4 + size > len(data):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[4:4 + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise FormatError(f"{path}: not a weight file")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported weight file version {header.get('version')}")
    topology = NetworkTopology.from_dict(header["topology"])
    shapes = topology.layer_shapes()
    if [[n, list(s)] for n, s in shapes] != header["layers"]:
        raise FormatError(f"{path}: layer table does not match topology")
    payload = data[4 + size:]
    expected = 4 * topology.parameter_count()
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    arrays, offset = {}, 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        arrays[name] = flat[offset:offset + n].reshape(shape).copy()
        offset += n
    if not all(np.all(np.isfinite(a)) for a in arrays.values()):
        raise FormatError(f"{path}: non-finite parameter values")
    return NetworkParameters(topology, arrays, float(header["norm_factor"]), header.get("meta", {}))
