"""EVM instruction table snapshot: byte -> (mnemonic, immediate width).

Snapshot of the Cancun fork table (PUSH0, TLOAD/TSTORE, MCOPY, BLOBHASH,
BLOBBASEFEE included). Unassigned bytes are absent and disassemble as INVALID.
"""

from __future__ import annotations

import numpy as np

FORK = "cancun"

_BASE: dict[int, str] = {
    # stop and arithmetic
    0x00: "STOP",
    0x01: "ADD",
    0x02: "MUL",
    0x03: "SUB",
    0x04: "DIV",
    0x05: "SDIV",
    0x06: "MOD",
    0x07: "SMOD",
    0x08: "ADDMOD",
    0x09: "MULMOD",
    0x0A: "EXP",
    0x0B: "SIGNEXTEND",
    # comparison and bitwise
    0x10: "LT",
    0x11: "GT",
    0x12: "SLT",
    0x13: "SGT",
    0x14: "EQ",
    0x15: "ISZERO",
    0x16: "AND",
    0x17: "OR",
    0x18: "XOR",
    0x19: "NOT",
    0x1A: "BYTE",
    0x1B: "SHL",
    0x1C: "SHR",
    0x1D: "SAR",
    0x20: "KECCAK256",
    # environment
    0x30: "ADDRESS",
    0x31: "BALANCE",
    0x32: "ORIGIN",
    0x33: "CALLER",
    0x34: "CALLVALUE",
    0x35: "CALLDATALOAD",
    0x36: "CALLDATASIZE",
    0x37: "CALLDATACOPY",
    0x38: "CODESIZE",
    0x39: "CODECOPY",
    0x3A: "GASPRICE",
    0x3B: "EXTCODESIZE",
    0x3C: "EXTCODECOPY",
    0x3D: "RETURNDATASIZE",
    0x3E: "RETURNDATACOPY",
    0x3F: "EXTCODEHASH",
    # block
    0x40: "BLOCKHASH",
    0x41: "COINBASE",
    0x42: "TIMESTAMP",
    0x43: "NUMBER",
    0x44: "PREVRANDAO",
    0x45: "GASLIMIT",
    0x46: "CHAINID",
    0x47: "SELFBALANCE",
    0x48: "BASEFEE",
    0x49: "BLOBHASH",
    0x4A: "BLOBBASEFEE",
    # stack, memory, storage, flow
    0x50: "POP",
    0x51: "MLOAD",
    0x52: "MSTORE",
    0x53: "MSTORE8",
    0x54: "SLOAD",
    0x55: "SSTORE",
    0x56: "JUMP",
    0x57: "JUMPI",
    0x58: "PC",
    0x59: "MSIZE",
    0x5A: "GAS",
    0x5B: "JUMPDEST",
    0x5C: "TLOAD",
    0x5D: "TSTORE",
    0x5E: "MCOPY",
    0x5F: "PUSH0",
    # logging
    0xA0: "LOG0",
    0xA1: "LOG1",
    0xA2: "LOG2",
    0xA3: "LOG3",
    0xA4: "LOG4",
    # system
    0xF0: "CREATE",
    0xF1: "CALL",
    0xF2: "CALLCODE",
    0xF3: "RETURN",
    0xF4: "DELEGATECALL",
    0xF5: "CREATE2",
    0xFA: "STATICCALL",
    0xFD: "REVERT",
    0xFE: "INVALID",
    0xFF: "SELFDESTRUCT",
}

OPCODES: dict[int, tuple[str, int]] = {code: (name, 0) for code, name in _BASE.items()}
for _n in range(1, 33):
    OPCODES[0x5F + _n] = (f"PUSH{_n}", _n)
for _n in range(1, 17):
    OPCODES[0x7F + _n] = (f"DUP{_n}", 0)
    OPCODES[0x8F + _n] = (f"SWAP{_n}", 0)
OPCODES = dict(sorted(OPCODES.items()))

BY_NAME: dict[str, int] = {name: code for code, (name, _) in OPCODES.items()}

# Immediate width per byte value; unassigned bytes take none.
IMMEDIATE_WIDTHS = np.zeros(256, dtype=np.int64)
for _code, (_, _width) in OPCODES.items():
    IMMEDIATE_WIDTHS[_code] = _width


def mnemonic_table() -> dict[int, str]:
    """Byte -> mnemonic for every assigned opcode."""
    return {code: name for code, (name, _) in OPCODES.items()}


def lookup(byte: int) -> tuple[str, int]:
    return OPCODES.get(byte, ("INVALID", 0))
