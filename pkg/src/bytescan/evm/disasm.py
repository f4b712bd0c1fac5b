"""Hex parsing, disassembly and hex-token featurization."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from bytescan import kernels
from bytescan.errors import MalformedHex
from bytescan.evm.opcodes import IMMEDIATE_WIDTHS, lookup

_WS = re.compile(r"\s+")
_NOT_HEX = re.compile(r"[^0-9a-f]")


@dataclass(frozen=True)
class Bytecode:
    data: bytes
    source_hex: str | None = None

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode_byte: int
    mnemonic: str
    immediate: bytes = b""
    truncated: bool = False

    @property
    def size(self) -> int:
        return 1 + len(self.immediate)

    def render(self) -> str:
        text = f"{self.offset:04x}: {self.mnemonic}"
        if self.immediate:
            text += f" 0x{self.immediate.hex()}"
        return text


@dataclass(frozen=True)
class OpcodeSequence:
    instructions: tuple[Instruction, ...]
    code_length: int

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)

    def __getitem__(self, idx):
        return self.instructions[idx]

    @property
    def mnemonics(self) -> list[str]:
        return [ins.mnemonic for ins in self.instructions]

    def listing(self) -> str:
        return "\n".join(ins.render() for ins in self.instructions)


def parse_hex(text: str) -> Bytecode:
    """Decode a hex string, tolerating a ``0x`` prefix and embedded whitespace.

    Raises MalformedHex for an odd digit count or a non-hex character; the
    reported offset indexes the digit stream after prefix and whitespace
    removal.
    """
    cleaned = _WS.sub("", text).lower()
    if cleaned.startswith("0x"):
        cleaned = cleaned[2:]
    bad = _NOT_HEX.search(cleaned)
    if bad is not None:
        raise MalformedHex(f"non-hex character {bad.group()!r} at digit {bad.start()}", offset=bad.start())
    if len(cleaned) % 2:
        raise MalformedHex(f"odd number of hex digits ({len(cleaned)})", offset=len(cleaned) - 1)
    return Bytecode(bytes.fromhex(cleaned), source_hex=text)


def _as_bytes(code: Bytecode | bytes | bytearray) -> bytes:
    return code.data if isinstance(code, Bytecode) else bytes(code)


def disassemble(code: Bytecode | bytes | bytearray) -> OpcodeSequence:
    """Split bytecode into instructions. Never raises.

    A PUSH whose immediate runs past the end of code reads the missing bytes as
    zero and is flagged ``truncated``. Unassigned bytes decode as INVALID.
    """
    raw = _as_bytes(code)
    n = len(raw)
    if n == 0:
        return OpcodeSequence((), 0)
    arr = np.frombuffer(raw, dtype=np.uint8)
    starts = kernels.instruction_starts(arr, IMMEDIATE_WIDTHS)
    out = []
    for off in starts.tolist():
        op = raw[off]
        name, width = lookup(op)
        if width:
            imm = raw[off + 1 : off + 1 + width]
            short = width - len(imm)
            if short:
                imm = imm + b"\x00" * short
            out.append(Instruction(off, op, name, imm, short > 0))
        else:
            out.append(Instruction(off, op, name))
    return OpcodeSequence(tuple(out), n)


def reassemble(seq: OpcodeSequence) -> bytes:
    """Inverse of :func:`disassemble` (drops the zero-pad of a truncated PUSH)."""
    buf = bytearray()
    for ins in seq.instructions:
        buf.append(ins.opcode_byte)
        buf += ins.immediate
    return bytes(buf[: seq.code_length])


def to_hex_tokens(code: Bytecode | bytes | bytearray) -> list[str]:
    """One lowercase two-digit token per byte, immediates included."""
    raw = _as_bytes(code)
    return [f"{b:02x}" for b in raw]


def tokens_to_bytes(tokens: list[str]) -> bytes:
    return parse_hex("".join(tokens)).data
