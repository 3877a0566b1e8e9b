"""Binary checkpoint container.

Layout::

    b"DINCKPT1"
    uint64 little-endian manifest length
    manifest (UTF-8 JSON, sorted keys)
    tensor payloads, little-endian float32, in manifest order

Manifest offsets are relative to the first payload byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import SchemaMismatch
from .features import FeatureSchema, parse_schema
from .model import Network

MAGIC = b"DINCKPT1"
FORMAT_VERSION = 1


def encode_checkpoint(net: Network, config: dict | None = None) -> bytes:
    tensors = []
    payload = bytearray()
    for name, arr in net.state_dict().items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": len(payload), "nbytes": len(data)})
        payload += data
    manifest = {
        "format": FORMAT_VERSION,
        "model_kind": net.kind,
        "schema_hash": net.schema.digest(),
        "schema": net.schema.to_tsv(),
        "model": {
            "embedding_dim": net.embedding_dim,
            "mlp_widths": list(net.mlp_widths),
            "activation": net.activation,
            "unit_hidden": net.unit_hidden,
        },
        "config": config or {},
        "tensors": tensors,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(blob)) + blob + bytes(payload)


def save_checkpoint(net: Network, path, config: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(net, config))


def read_manifest(raw: bytes) -> tuple[dict, int]:
    if raw[:8] != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    (length,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + length].decode("utf-8"))
    return manifest, 16 + length


def decode_checkpoint(raw: bytes, expected_schema: FeatureSchema | None = None) -> tuple[Network, dict]:
    manifest, start = read_manifest(raw)
    if expected_schema is not None and expected_schema.digest() != manifest["schema_hash"]:
        raise SchemaMismatch("checkpoint schema does not match the data schema")
    schema = parse_schema(manifest["schema"], "checkpoint")
    if schema.digest() != manifest["schema_hash"]:
        raise SchemaMismatch("embedded schema does not match its hash")
    m = manifest["model"]
    net = Network(schema, manifest["model_kind"], m["embedding_dim"], m["mlp_widths"],
                  m["activation"], m["unit_hidden"], seed=0, dtype=np.float32)
    state = {}
    payload_len = len(raw) - start
    for t in manifest["tensors"]:
        off, nbytes = t["offset"], t["nbytes"]
        if off + nbytes > payload_len or nbytes != 4 * int(np.prod(t["shape"], dtype=np.int64)):
            raise ValueError(f"tensor {t['name']!r}: inconsistent offset or length")
        buf = raw[start + off:start + off + nbytes]
        state[t["name"]] = np.frombuffer(buf, dtype="<f4").reshape(t["shape"])
    net.load_state_dict(state)
    return net, manifest


def load_checkpoint(path, expected_schema: FeatureSchema | None = None) -> tuple[Network, dict]:
    return decode_checkpoint(Path(path).read_bytes(), expected_schema)
