"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"BSCKPT\\x00\\x01"
    header     u32 length, then UTF-8 JSON (sorted keys): model kind, config,
               vocabulary tokens and capacity, window config, free-form meta
    count      u32 number of tensors
    tensor     u16 name length, UTF-8 name, u8 rank, rank x u64 dims,
               prod(dims) x f64 values in row-major order

Loading checks every tensor name and shape against the layout implied by
the stored config, so a truncated or mismatched file fails loudly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bytescan import model as M
from bytescan.errors import CheckpointError
from bytescan.tokenizer import Vocabulary
from bytescan.window import WindowConfig

MAGIC = b"BSCKPT\x00\x01"


@dataclass
class Checkpoint:
    kind: str
    config: M.ModelConfig
    params: dict[str, np.ndarray]
    vocab: Vocabulary
    window: WindowConfig = field(default_factory=WindowConfig)
    meta: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config.to_dict(),
            "vocab": {"capacity": self.vocab.capacity, "tokens": list(self.vocab.id_to_token[2:])},
            "window": {
                "window_size": self.window.window_size,
                "overlap": self.window.overlap,
                "aggregation": self.window.aggregation,
            },
            "meta": self.meta,
        }


def to_bytes(ckpt: Checkpoint) -> bytes:
    shapes = M.param_shapes(ckpt.config)
    if set(shapes) != set(ckpt.params):
        raise CheckpointError("parameter names do not match the model layout")
    head = json.dumps(ckpt.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(head)), head, struct.pack("<I", len(shapes))]
    for name in shapes:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        if arr.shape != shapes[name]:
            raise CheckpointError(f"{name}: shape {arr.shape}, layout expects {shapes[name]}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (hlen,) = r.unpack("<I")
    try:
        head = json.loads(r.take(hlen).decode("utf-8"))
        kind = head["kind"]
        config = M.config_from_dict(kind, head["config"])
        vocab = Vocabulary.from_tokens(head["vocab"]["tokens"], capacity=head["vocab"]["capacity"])
        window = WindowConfig(**head["window"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from None
    shapes = M.param_shapes(config)
    (count,) = r.unpack("<I")
    if count != len(shapes):
        raise CheckpointError(f"checkpoint holds {count} tensors, layout expects {len(shapes)}")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        if shapes.get(name) != tuple(dims):
            raise CheckpointError(f"tensor {name!r} has shape {tuple(dims)}, layout expects {shapes.get(name)}")
        n = int(np.prod(dims)) if dims else 1
        params[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after the last tensor")
    if M.param_count(params) != M.expected_param_count(config):
        raise CheckpointError("parameter counts disagree with the stored config")
    return Checkpoint(kind, config, params, vocab, window, head.get("meta", {}))


def load(path: str | Path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return from_bytes(buf)


def fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
