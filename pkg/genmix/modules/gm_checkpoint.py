"""Named-tensor checkpoint container.

Layout (little-endian)::

    b"MGAD" | u32 version | u32 tensor count
    per tensor: u16 name length | name (utf-8) | u8 rank | u32 dims[rank]
                | u8 dtype tag | raw data
    remainder: utf-8 JSON metadata

Optimizer moments travel as extra tensors named ``<param>.m`` / ``<param>.v``;
the metadata names which parameters are non-trainable and which carry
moments, so a load restores the exact ``ParameterSet`` and ``AdamState``.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from genmix.internal.errors import CheckpointFormatError
from genmix.internal.utils import atomic_write_bytes, get_genmix_logger
from genmix.modules.gm_nn import AdamState, ParameterSet

MAGIC = b"MGAD"
VERSION = 1
DTYPE_TAGS = {0: np.dtype("<f4")}
_TAG_FOR_DTYPE = {np.dtype("float32"): 0}
RESERVED_METADATA_KEYS = ("non_trainable", "optimizer")

logger = get_genmix_logger()


@dataclass
class Checkpoint:
    params: ParameterSet
    optimizer: Optional[AdamState] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


def _encode_tensor(name: str, array: np.ndarray) -> bytes:
    tag = _TAG_FOR_DTYPE.get(array.dtype)
    if tag is None:
        raise CheckpointFormatError(
            f"tensor '{name}' has dtype {array.dtype}, only float32 is stored")
    encoded_name = name.encode("utf-8")
    return b"".join([
        struct.pack("<H", len(encoded_name)),
        encoded_name,
        struct.pack("<B", array.ndim),
        struct.pack(f"<{array.ndim}I", *array.shape),
        struct.pack("<B", tag),
        np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes(),
    ])


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    tensors: List[Tuple[str, np.ndarray]] = list(checkpoint.params.items())
    clashes = sorted(k for k in RESERVED_METADATA_KEYS if k in checkpoint.metadata)
    if clashes:
        raise CheckpointFormatError(
            f"metadata keys {clashes} are reserved for the checkpoint layout")
    metadata = dict(checkpoint.metadata)
    metadata["non_trainable"] = [n for n in checkpoint.params
                                 if not checkpoint.params.is_trainable(n)]
    optimizer = checkpoint.optimizer
    if optimizer is not None:
        moment_names = list(optimizer.m)
        metadata["optimizer"] = {
            "lr": optimizer.lr, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
            "eps": optimizer.eps, "step": optimizer.step, "params": moment_names,
        }
        tensors += [(f"{n}.m", optimizer.m[n]) for n in moment_names]
        tensors += [(f"{n}.v", optimizer.v[n]) for n in moment_names]
    else:
        metadata["optimizer"] = None

    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    chunks += [_encode_tensor(name, array) for name, array in tensors]
    chunks.append(json.dumps(metadata, sort_keys=True).encode("utf-8"))
    return b"".join(chunks)


class _Reader:

    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointFormatError(
                f"truncated payload at byte {self.offset}: need {size} bytes, "
                f"{len(self.payload) - self.offset} left")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(payload: bytes) -> Checkpoint:
    reader = _Reader(payload)
    if reader.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic, not a genmix checkpoint")
    version, count = reader.unpack("<II")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name_length, = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8")
        rank, = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        tag_offset = reader.offset
        tag, = reader.unpack("<B")
        if tag not in DTYPE_TAGS:
            raise CheckpointFormatError(f"unknown dtype tag {tag} at byte {tag_offset}")
        dtype = DTYPE_TAGS[tag]
        size = int(np.prod(shape)) * dtype.itemsize
        data = np.frombuffer(reader.take(size), dtype=dtype).reshape(shape)
        tensors[name] = data.astype(np.float32)

    try:
        metadata = json.loads(payload[reader.offset:].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointFormatError(f"invalid metadata at byte {reader.offset}: {exc}")

    optimizer_meta = metadata.pop("optimizer", None)
    non_trainable = set(metadata.pop("non_trainable", []))
    optimizer = None
    moment_keys = set()
    if optimizer_meta is not None:
        optimizer = AdamState(lr=optimizer_meta["lr"], beta1=optimizer_meta["beta1"],
                              beta2=optimizer_meta["beta2"], eps=optimizer_meta["eps"],
                              step=optimizer_meta["step"])
        for name in optimizer_meta["params"]:
            optimizer.m[name] = tensors[f"{name}.m"]
            optimizer.v[name] = tensors[f"{name}.v"]
            moment_keys.update({f"{name}.m", f"{name}.v"})

    params = ParameterSet()
    for name, array in tensors.items():
        if name not in moment_keys:
            params.add(name, array, trainable=name not in non_trainable)
    return Checkpoint(params, optimizer, metadata)


def save_checkpoint(path, params: ParameterSet, optimizer: Optional[AdamState] = None,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    payload = encode_checkpoint(Checkpoint(params, optimizer, metadata or {}))
    atomic_write_bytes(path, payload)
    logger.debug("Wrote checkpoint %s (%d bytes)", path, len(payload))
    return Path(path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def expected_size(params: ParameterSet, metadata_bytes: int) -> int:
    size = 12
    for name, array in params.items():
        size += 2 + len(name.encode("utf-8")) + 1 + 4 * array.ndim + 1 + 4 * array.size
    return size + metadata_bytes
