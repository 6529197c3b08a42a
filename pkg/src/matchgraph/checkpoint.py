"""Binary checkpoint: JSON manifest followed by raw little-endian arrays.

Layout::

    b"MATCHGRAPH-CKPT\\n"
    uint64 little-endian manifest length
    manifest (UTF-8 JSON, sorted keys)
    array bytes, row-major, in manifest order

The manifest records the format version, model config, dtype, the name
and shape of every array, the vocabularies and label set, and (for
resumable checkpoints) the optimizer step and epoch.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Value
from .data import RelationVocab, Vocab
from .model import Model, ModelConfig

MAGIC = b"MATCHGRAPH-CKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: Model, optimizer=None, train_state: dict | None = None):
    """Write ``model`` (and optionally Adam moments and loop state) to ``path``."""
    dtype = np.dtype(model.config.dtype).newbyteorder("<")
    arrays: list[tuple[str, np.ndarray]] = [(k, v.data) for k, v in model.params.items()]
    state = dict(train_state or {})
    if optimizer is not None:
        state["adam_t"] = optimizer.t
        arrays += [(f"adam.m.{k}", optimizer.m[k]) for k in model.params]
        arrays += [(f"adam.v.{k}", optimizer.v[k]) for k in model.params]
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "dtype": model.config.dtype,
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
        "vocab": model.vocab.itos,
        "min_count": model.vocab.min_count,
        "relations": model.relvocab.itos,
        "labels": list(model.labels),
        "train_state": state or None,
    }
    header = json.dumps(manifest, sort_keys=True, ensure_ascii=False).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes(order="C"))
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Raw manifest and named arrays."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    manifest = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {manifest.get('format_version')}")
    dtype = np.dtype(manifest["dtype"]).newbyteorder("<")
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated at array {entry['name']}")
        arr = np.frombuffer(raw, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
        arrays[entry["name"]] = arr.reshape(shape).astype(manifest["dtype"])
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return manifest, arrays


def load_checkpoint(path: str | Path) -> tuple[Model, dict | None, dict[str, np.ndarray]]:
    """Rebuild the model; also return loop state and any optimizer arrays."""
    manifest, arrays = read_checkpoint(path)
    cfg = ModelConfig.from_dict(manifest["config"])
    params = {k: Value(v, requires_grad=True) for k, v in arrays.items() if not k.startswith("adam.")}
    model = Model(
        config=cfg,
        params=params,
        vocab=Vocab(list(manifest["vocab"]), manifest.get("min_count", 1)),
        relvocab=RelationVocab(list(manifest["relations"])),
        labels=tuple(manifest["labels"]),
    )
    extra = {k: v for k, v in arrays.items() if k.startswith("adam.")}
    return model, manifest.get("train_state"), extra
