"""Binary checkpoint format.

Layout::

    magic  b"TAGKCKPT"        8 bytes
    version                   uint32 LE
    header length             uint32 LE
    header                    UTF-8 JSON, sorted keys
    payload                   float32 LE arrays in GnnParameters.arrays() order

The header records architecture, layer count, F, seed, provider descriptor,
training step count, the view/train configs and the shape of every array.
Nothing time- or host-dependent is written, so equal runs give equal bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, ViewConfig
from .embeddings import ProviderDescriptor
from .gnn import GnnParameters

__all__ = ["Checkpoint", "CheckpointError", "MAGIC", "VERSION"]

MAGIC = b"TAGKCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: GnnParameters
    provider: ProviderDescriptor
    view: ViewConfig
    train: TrainConfig
    steps: int = 0
    extra: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "architecture": self.params.architecture,
            "num_layers": self.params.num_layers,
            "dimension": self.params.hidden_dim,
            "seed": self.params.seed,
            "provider": self.provider.to_dict(),
            "steps": self.steps,
            "view": self.view.to_dict(),
            "train": self.train.to_dict(),
            "shapes": [list(a.shape) for a in self.params.arrays()],
            "extra": self.extra,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in self.params.arrays())
        return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + payload

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < _PREFIX.size:
            raise CheckpointError("file too short to be a checkpoint")
        magic, version, head_len = _PREFIX.unpack_from(data)
        if magic != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic number)")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        start = _PREFIX.size
        try:
            head = json.loads(data[start:start + head_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        off = start + head_len
        arrays = []
        for shape in head["shapes"]:
            count = int(np.prod(shape)) if shape else 1
            if off + 4 * count > len(data):
                raise CheckpointError("checkpoint payload is truncated")
            arrays.append(np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32))
            off += 4 * count
        if off != len(data):
            raise CheckpointError("trailing bytes after checkpoint payload")
        layers = head["num_layers"]
        arch = head["architecture"]
        weights = arrays[0:2 * layers:2]
        biases = arrays[1:2 * layers:2]
        eps = arrays[2 * layers] if arch == "gin" else np.zeros(layers, dtype=np.float32)
        params = GnnParameters(arch, weights, biases, eps, head["seed"])
        return cls(
            params=params,
            provider=ProviderDescriptor.from_dict(head["provider"]),
            view=ViewConfig.from_dict(head["view"]),
            train=TrainConfig.from_dict(head["train"]),
            steps=head["steps"],
            extra=head.get("extra", {}),
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
