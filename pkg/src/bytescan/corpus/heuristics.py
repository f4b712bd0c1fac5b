"""Syntactic stand-in for trace-based vulnerability labeling.

Deliberately conservative and much weaker than symbolic execution. It only
looks at the linear instruction stream, never at control flow, so it is fit
for synthetic ground truth and smoke-labeling of ingested code, nothing more.

Rule cascade, first match wins:

1. SUICIDAL  - SELFDESTRUCT with no owner check anywhere before it.
2. PRODIGAL  - CALL preceded (within 8 instructions) by a nonzero value source
               and with no owner check anywhere before it.
3. GREEDY    - CALLVALUE present and no CALL, CALLCODE, DELEGATECALL or
               SELFDESTRUCT anywhere.
4. NORMAL    - otherwise.

An owner check is CALLER followed by EQ within the next few instructions
(covers ``CALLER EQ`` and ``CALLER PUSH20 <owner> EQ``).
"""

from __future__ import annotations

from bytescan.corpus.records import VulnLabel
from bytescan.evm.disasm import OpcodeSequence

CALLER = 0x33
EQ = 0x14
CALLVALUE = 0x34
BALANCE = 0x31
SELFBALANCE = 0x47
CALL = 0xF1
CALLCODE = 0xF2
DELEGATECALL = 0xF4
SELFDESTRUCT = 0xFF

RELEASING = frozenset({CALL, CALLCODE, DELEGATECALL, SELFDESTRUCT})
OWNER_CHECK_SPAN = 4
VALUE_LOOKBACK = 8


def _first_owner_check(ops: list[int]) -> int:
    """Index of the EQ closing the earliest owner check, or len(ops) if none."""
    last_caller = -OWNER_CHECK_SPAN - 1
    for i, op in enumerate(ops):
        if op == CALLER:
            last_caller = i
        elif op == EQ and i - last_caller <= OWNER_CHECK_SPAN:
            return i
    return len(ops)


def _nonzero_value_source(seq: OpcodeSequence, call_idx: int) -> bool:
    for ins in seq.instructions[max(0, call_idx - VALUE_LOOKBACK) : call_idx]:
        if ins.immediate and any(ins.immediate):
            return True
        if ins.opcode_byte in (CALLVALUE, BALANCE, SELFBALANCE):
            return True
    return False


def heuristic_label(seq: OpcodeSequence) -> VulnLabel:
    ops = [ins.opcode_byte for ins in seq.instructions]
    guard = _first_owner_check(ops)
    for i, op in enumerate(ops):
        if op == SELFDESTRUCT and i < guard:
            return VulnLabel.SUICIDAL
    for i, op in enumerate(ops):
        if op == CALL and i < guard and _nonzero_value_source(seq, i):
            return VulnLabel.PRODIGAL
    present = set(ops)
    if CALLVALUE in present and not present & RELEASING:
        return VulnLabel.GREEDY
    return VulnLabel.NORMAL
