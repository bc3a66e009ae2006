"""Binary parameter checkpoints.

Layout (all integers little-endian):

    bytes 0..3   magic b"RGSC"
    bytes 4..7   format version (uint32, currently 1)
    bytes 8..11  metadata length in bytes (uint32)
    ...          metadata, UTF-8 JSON: model name, input shape, layer
                 specs, trainable entry shapes (canonical order), and
                 batchnorm state layers
    ...          payload: float64 little-endian; trainable entries in
                 canonical order, then (mean, var) per batchnorm layer
"""

import json
import struct
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .errors import CheckpointError
from .nn.engine import ParamEntry, ParamStore
from .nn.layers import LayerSpec

MAGIC = b"RGSC"
VERSION = 1


def save_checkpoint(path, model: List[LayerSpec], params: ParamStore, meta: dict) -> None:
    meta = dict(meta)
    meta["layers"] = [spec.to_dict() for spec in model]
    meta["entries"] = [
        {"layer": e.layer_index, "role": e.role, "shape": list(e.array.shape)}
        for e in params.entries
    ]
    meta["bn_layers"] = sorted(params.bn_state)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for e in params.entries:
            fh.write(np.ascontiguousarray(e.array, dtype="<f8").tobytes())
        for i in meta["bn_layers"]:
            fh.write(np.ascontiguousarray(params.bn_state[i]["mean"], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(params.bn_state[i]["var"], dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[List[LayerSpec], ParamStore, dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(raw[12:12 + meta_len].decode("utf-8"))
        model = [LayerSpec.from_dict(d) for d in meta["layers"]]
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: malformed metadata: {exc}") from None

    offset = 12 + meta_len

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
        return arr

    entries = [ParamEntry(d["layer"], d["role"], take(d["shape"])) for d in meta["entries"]]
    bn_state = {}
    for i in meta.get("bn_layers", []):
        width = model[i].num_features
        bn_state[int(i)] = {"mean": take([width]), "var": take([width])}
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    return model, ParamStore(entries, bn_state), meta
