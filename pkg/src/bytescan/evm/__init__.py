from bytescan.evm.disasm import (
    Bytecode,
    Instruction,
    OpcodeSequence,
    disassemble,
    parse_hex,
    reassemble,
    to_hex_tokens,
    tokens_to_bytes,
)
from bytescan.evm.opcodes import FORK, OPCODES, mnemonic_table

__all__ = [
    "Bytecode",
    "FORK",
    "Instruction",
    "OPCODES",
    "OpcodeSequence",
    "disassemble",
    "mnemonic_table",
    "parse_hex",
    "reassemble",
    "to_hex_tokens",
    "tokens_to_bytes",
]
