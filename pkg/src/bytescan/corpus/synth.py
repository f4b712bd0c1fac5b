"""Seeded synthetic contracts with planted vulnerability motifs.

Backgrounds are random instruction streams after the usual ``60 80 60 40 52``
free-memory-pointer prologue. They never contain CALLER, CALLVALUE, the call
family or SELFDESTRUCT, and those bytes are also kept out of PUSH immediates,
so every motif byte is unambiguous at the token level and the heuristic
labeler recovers the planted class exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bytescan.corpus.records import ContractRecord, VulnLabel
from bytescan.evm.disasm import to_hex_tokens
from bytescan.evm.opcodes import IMMEDIATE_WIDTHS, OPCODES

PROLOGUE = bytes.fromhex("6080604052")

MOTIFS: dict[VulnLabel, bytes] = {
    # CALLVALUE PUSH1 0 SLOAD ADD PUSH1 0 SSTORE: book the deposit, never pay out
    VulnLabel.GREEDY: bytes.fromhex("3460005401600055"),
    # PUSH1 0 CALLDATALOAD SELFDESTRUCT: anyone picks the beneficiary
    VulnLabel.SUICIDAL: bytes.fromhex("600035ff"),
    # PUSH1 0 DUP1 DUP1 DUP1 PUSH1 1 PUSH1 4 CALLDATALOAD GAS CALL: send 1 wei to a caller-chosen address
    VulnLabel.PRODIGAL: bytes.fromhex("600080808060016004355af1"),
}

RESERVED_BYTES = frozenset({0x33, 0x34, 0xF1, 0xF2, 0xF4, 0xFF})
_BACKGROUND_EXCLUDE = RESERVED_BYTES | {0xFE}

_PUSH_MIX = {0x60: 0.60, 0x61: 0.25, 0x63: 0.05, 0x73: 0.05, 0x7F: 0.05}


@dataclass(frozen=True)
class SynthConfig:
    min_length: int = 200
    max_length: int = 3000
    vulnerable_classes: tuple[VulnLabel, ...] = (VulnLabel.GREEDY,)
    push_fraction: float = 0.3
    guarded_fraction: float = 0.0  # share of normals carrying an owner-guarded SELFDESTRUCT

    def __post_init__(self) -> None:
        shortest = len(PROLOGUE) + max(len(m) for m in MOTIFS.values()) + 40
        if self.min_length < shortest:
            raise ValueError(f"min_length must be >= {shortest}")
        if self.max_length < self.min_length:
            raise ValueError("max_length < min_length")
        if not self.vulnerable_classes or VulnLabel.NORMAL in self.vulnerable_classes:
            raise ValueError("vulnerable_classes must list one or more non-normal classes")


def _pool() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    plain = [c for c, (_, w) in OPCODES.items() if w == 0 and c not in _BACKGROUND_EXCLUDE]
    ops = np.array(plain + list(_PUSH_MIX), dtype=np.int64)
    imm = np.array([b for b in range(256) if b not in RESERVED_BYTES], dtype=np.uint8)
    return ops, np.array(plain, dtype=np.int64), imm


_OPS, _PLAIN, _IMM = _pool()


def _probs(push_fraction: float) -> np.ndarray:
    n_plain = len(_PLAIN)
    p = np.full(len(_OPS), (1.0 - push_fraction) / n_plain)
    p[n_plain:] = [push_fraction * w for w in _PUSH_MIX.values()]
    return p / p.sum()


def background(length: int, rng: np.random.Generator, push_fraction: float = 0.3) -> list[bytes]:
    """Random instruction stream of exactly ``length`` bytes, one entry per instruction."""
    if length <= 0:
        return []
    ops = rng.choice(_OPS, size=length, p=_probs(push_fraction))
    sizes = 1 + IMMEDIATE_WIDTHS[ops]
    cum = np.cumsum(sizes)
    k = int(np.searchsorted(cum, length, side="right"))
    ops = ops[:k]
    used = int(cum[k - 1]) if k else 0
    tail = rng.choice(_PLAIN, size=length - used)
    ops = np.concatenate([ops, tail])
    sizes = 1 + IMMEDIATE_WIDTHS[ops]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    code = np.empty(length, dtype=np.uint8)
    is_op = np.zeros(length, dtype=bool)
    is_op[starts] = True
    code[is_op] = ops
    code[~is_op] = rng.choice(_IMM, size=int((~is_op).sum()))
    raw = code.tobytes()
    bounds = np.append(starts, length).tolist()
    return [raw[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def _guarded_kill(rng: np.random.Generator) -> bytes:
    owner = rng.choice(_IMM, size=20).tobytes()
    # CALLER PUSH20 owner EQ PUSH1 .. JUMPI PUSH1 0 SELFDESTRUCT
    return b"\x33\x73" + owner + b"\x14\x60\x08\x57\x60\x00\xff"


def _address(rng: np.random.Generator) -> str:
    return "0x" + rng.integers(0, 256, size=20, dtype=np.uint8).tobytes().hex()


def synth_contract(label: VulnLabel, length: int, cfg: SynthConfig, rng: np.random.Generator) -> bytes:
    if label is VulnLabel.NORMAL:
        motif = _guarded_kill(rng) if rng.random() < cfg.guarded_fraction else b""
    else:
        motif = MOTIFS[label]
    body = background(length - len(PROLOGUE) - len(motif), rng, cfg.push_fraction)
    at = int(rng.integers(0, len(body) + 1))
    return PROLOGUE + b"".join(body[:at]) + motif + b"".join(body[at:])


def synthesize_corpus(n: int, cfg: SynthConfig | None = None, seed: int = 0) -> list[ContractRecord]:
    """``n`` labeled contracts, half normal (rounded up), the rest cycling through
    ``cfg.vulnerable_classes``; order shuffled, fully determined by ``seed``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    n_vuln = n // 2
    labels = [VulnLabel.NORMAL] * (n - n_vuln)
    labels += [cfg.vulnerable_classes[i % len(cfg.vulnerable_classes)] for i in range(n_vuln)]
    order = rng.permutation(n)
    out = []
    for idx in order:
        label = labels[idx]
        length = int(rng.integers(cfg.min_length, cfg.max_length + 1))
        code = synth_contract(label, length, cfg, rng)
        out.append(ContractRecord.labeled(_address(rng), to_hex_tokens(code), label, source="synthetic"))
    return out
