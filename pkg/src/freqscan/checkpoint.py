"""Checkpoint container.

Layout: the 5-byte magic ``GMBA1``, a little-endian uint32 header length, a
UTF-8 JSON header, then the tensor payload as little-endian float32. The
header holds ``config``, ``meta`` and ``tensors``: a list of
{name, shape, offset} with offsets in bytes from the start of the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from freqscan.model import ModelConfig, PlainClassifier

MAGIC = b"GMBA1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: PlainClassifier, meta: dict | None = None) -> None:
    tensors, chunks, offset = [], [], 0
    for name, t in model.state_dict().items():
        arr = t.detach().cpu().numpy().astype("<f4", copy=False)
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {"config": model.config.to_dict(), "meta": meta or {}, "tensors": tensors}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for c in chunks:
            f.write(c)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:5]!r}")
    (n,) = struct.unpack("<I", data[5:9])
    header = json.loads(data[9:9 + n])
    payload = memoryview(data)[9 + n:]
    arrays = {}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        start = spec["offset"]
        if start + 4 * count > len(payload):
            raise CheckpointError(f"{path}: tensor {spec['name']} runs past end of file")
        arrays[spec["name"]] = np.frombuffer(payload, "<f4", count, start).reshape(spec["shape"]).copy()
    return header, arrays


def load_checkpoint(path) -> tuple[PlainClassifier, dict]:
    header, arrays = read_checkpoint(path)
    model = PlainClassifier(ModelConfig.from_dict(header["config"]))
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    model.load_state_dict(state)
    return model, header["meta"]
