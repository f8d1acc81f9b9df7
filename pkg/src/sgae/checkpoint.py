"""Binary checkpoint format.

Layout::

    b"SGAE"            4 bytes magic
    format_version     u32 little-endian
    header_length      u64 little-endian
    header             UTF-8 JSON, sorted keys
    payload            concatenated little-endian float32 tensors

The header holds ``config``, ``epoch``, ``phase``, ``rng_state``, ``extra``
(vocabularies and similar) and ``tensors``: a list of
``{"name", "shape", "offset"}`` with byte offsets relative to the payload.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SGAE"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: "OrderedDict[str, np.ndarray]"
    config: dict = field(default_factory=dict)
    epoch: int = 0
    phase: str = ""
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.tensors = OrderedDict((k, np.ascontiguousarray(v, dtype="<f4")) for k, v in self.tensors.items())

    @classmethod
    def from_params(cls, params, **kw) -> "Checkpoint":
        return cls(OrderedDict((k, p.data) for k, p in params.items()), **kw)

    def to_bytes(self) -> bytes:
        directory, offset, chunks = [], 0, []
        for name, arr in self.tensors.items():
            raw = arr.tobytes(order="C")
            directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
        header = {"config": self.config, "epoch": self.epoch, "phase": self.phase,
                  "rng_state": self.rng_state, "extra": self.extra, "tensors": directory}
        hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
        return MAGIC + struct.pack("<IQ", self.format_version, len(hbytes)) + hbytes + b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != MAGIC:
            raise CheckpointError("not an SGAE checkpoint (bad magic)")
        version, hlen = struct.unpack("<IQ", blob[4:16])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
        payload = memoryview(blob)[16 + hlen:]
        tensors = OrderedDict()
        for entry in header["tensors"]:
            n = int(np.prod(entry["shape"], dtype=np.int64))
            arr = np.frombuffer(payload, dtype="<f4", count=n, offset=entry["offset"])
            tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
        return cls(tensors, header["config"], header["epoch"], header["phase"],
                   header["rng_state"], header["extra"], version)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def restore_into(self, params, strict: bool = True, prefix_map: dict | None = None) -> list[str]:
        """Copy matching tensors into live parameters; returns the names restored."""
        restored = []
        for name, p in params.items():
            src = name
            if prefix_map:
                for new, old in prefix_map.items():
                    if name.startswith(new):
                        src = old + name[len(new):]
            if src not in self.tensors:
                if strict:
                    raise CheckpointError(f"checkpoint has no tensor {src!r}")
                continue
            arr = self.tensors[src]
            if arr.shape != p.shape:
                raise CheckpointError(f"{src}: checkpoint shape {arr.shape} != parameter {p.shape}")
            p.data = arr.astype(p.dtype)
            restored.append(name)
        return restored

    def __eq__(self, other) -> bool:
        return isinstance(other, Checkpoint) and self.to_bytes() == other.to_bytes()
