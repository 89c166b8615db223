"""EVM runtime bytecode handling: linear-sweep disassembly, opcode-family
simplification, and fixed-length integer tokenization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

MAX_SEQUENCE_LEN = 200
PAD_ID = 0

# byte -> (mnemonic, push operand width)
OPCODE_TABLE: dict[int, tuple[str, int]] = {}


def _op(byte: int, name: str, push_bytes: int = 0) -> None:
    OPCODE_TABLE[byte] = (name, push_bytes)


_op(0x00, "STOP")
for _b, _n in enumerate(
    ["ADD", "MUL", "SUB", "DIV", "SDIV", "MOD", "SMOD", "ADDMOD", "MULMOD", "EXP", "SIGNEXTEND"],
    start=0x01,
):
    _op(_b, _n)
for _b, _n in enumerate(
    ["LT", "GT", "SLT", "SGT", "EQ", "ISZERO", "AND", "OR", "XOR", "NOT", "BYTE", "SHL", "SHR", "SAR"],
    start=0x10,
):
    _op(_b, _n)
_op(0x20, "SHA3")
for _b, _n in enumerate(
    [
        "ADDRESS", "BALANCE", "ORIGIN", "CALLER", "CALLVALUE", "CALLDATALOAD",
        "CALLDATASIZE", "CALLDATACOPY", "CODESIZE", "CODECOPY", "GASPRICE",
        "EXTCODESIZE", "EXTCODECOPY", "RETURNDATASIZE", "RETURNDATACOPY", "EXTCODEHASH",
    ],
    start=0x30,
):
    _op(_b, _n)
for _b, _n in enumerate(
    ["BLOCKHASH", "COINBASE", "TIMESTAMP", "NUMBER", "DIFFICULTY", "GASLIMIT",
     "CHAINID", "SELFBALANCE", "BASEFEE"],
    start=0x40,
):
    _op(_b, _n)
for _b, _n in enumerate(
    ["POP", "MLOAD", "MSTORE", "MSTORE8", "SLOAD", "SSTORE", "JUMP", "JUMPI",
     "PC", "MSIZE", "GAS", "JUMPDEST"],
    start=0x50,
):
    _op(_b, _n)
_op(0x5F, "PUSH0")
for _i in range(1, 33):
    _op(0x5F + _i, f"PUSH{_i}", push_bytes=_i)
for _i in range(1, 17):
    _op(0x7F + _i, f"DUP{_i}")
for _i in range(1, 17):
    _op(0x8F + _i, f"SWAP{_i}")
for _i in range(5):
    _op(0xA0 + _i, f"LOG{_i}")
_op(0xF0, "CREATE")
_op(0xF1, "CALL")
_op(0xF2, "CALLCODE")
_op(0xF3, "RETURN")
_op(0xF4, "DELEGATECALL")
_op(0xF5, "CREATE2")
_op(0xFA, "STATICCALL")
_op(0xFD, "REVERT")
_op(0xFF, "SELFDESTRUCT")

MNEMONIC_TO_BYTE = {name: byte for byte, (name, _) in OPCODE_TABLE.items()}

# Numbered opcode families collapse to their family name; PUSH0-PUSH4 and
# LOG0 sit below the collapsed ranges and keep their own names.
SIMPLIFY_MAP: dict[str, str] = {}
SIMPLIFY_MAP.update({f"DUP{i}": "DUP" for i in range(1, 17)})
SIMPLIFY_MAP.update({f"SWAP{i}": "SWAP" for i in range(1, 17)})
SIMPLIFY_MAP.update({f"PUSH{i}": "PUSH" for i in range(5, 33)})
SIMPLIFY_MAP.update({f"LOG{i}": "LOG" for i in range(1, 5)})


# Functional groups by opcode byte range, after the conventional instruction-set
# listing. Annotation only: nothing downstream consumes it.
_FUNCTIONAL_GROUPS: tuple[tuple[int, int, str], ...] = (
    (0x00, 0x0B, "stop-arithmetic"),
    (0x10, 0x1D, "comparison-bitwise"),
    (0x20, 0x20, "hashing"),
    (0x30, 0x3F, "environment"),
    (0x40, 0x48, "block"),
    (0x50, 0x5B, "stack-memory-storage-flow"),
    (0x5F, 0x7F, "push"),
    (0x80, 0x8F, "duplication"),
    (0x90, 0x9F, "exchange"),
    (0xA0, 0xA4, "logging"),
    (0xF0, 0xFF, "system"),
)


def functional_group(mnemonic: str) -> str:
    """Functional group of an opcode mnemonic; INVALID_0xXX maps to "invalid"."""
    byte = MNEMONIC_TO_BYTE.get(mnemonic)
    if byte is None:
        return "invalid"
    for lo, hi, name in _FUNCTIONAL_GROUPS:
        if lo <= byte <= hi:
            return name
    return "invalid"


class BytecodeError(ValueError):
    pass


class OddHexLength(BytecodeError):
    pass


class NonHexCharacter(BytecodeError):
    pass


class EmptyVocab(ValueError):
    pass


@dataclass
class Instruction:
    offset: int
    mnemonic: str
    operand: bytes = b""
    truncated: bool = False

    @property
    def size(self) -> int:
        return 1 + len(self.operand)

    def __str__(self) -> str:
        if self.operand:
            return f"{self.mnemonic} 0x{self.operand.hex()}"
        return self.mnemonic


@dataclass
class OpcodeSequence:
    mnemonics: list[str]


@dataclass
class TokenIdSequence:
    ids: list[int]
    pad_id: int = PAD_ID


@dataclass
class OpcodeVocab:
    """Mnemonic-to-id map fit on training data; ids start at 1, id 0 is the
    pad and the unknown-token id is reserved at len(vocab)+1.
    """

    ids: dict[str, int] = field(default_factory=dict)

    @classmethod
    def fit(cls, sequences: list[OpcodeSequence]) -> "OpcodeVocab":
        seen: dict[str, None] = {}
        for seq in sequences:
            for mnemonic in seq.mnemonics:
                seen.setdefault(mnemonic)
        return cls(ids={name: i for i, name in enumerate(sorted(seen), start=1)})

    @property
    def unk_id(self) -> int:
        return len(self.ids) + 1

    @property
    def num_ids(self) -> int:
        """Total id space including pad and unknown (embedding table size)."""
        return len(self.ids) + 2

    def id_for(self, mnemonic: str) -> int:
        return self.ids.get(mnemonic, self.unk_id)

    def to_json(self) -> dict:
        return {"ids": dict(self.ids)}

    @classmethod
    def from_json(cls, doc: dict) -> "OpcodeVocab":
        return cls(ids={str(k): int(v) for k, v in doc["ids"].items()})


def parse_hex(bytecode: str) -> bytes:
    code = bytecode.strip().lower()
    if code.startswith("0x"):
        code = code[2:]
    if len(code) % 2 != 0:
        raise OddHexLength(f"hex string has odd length {len(code)}")
    try:
        return bytes.fromhex(code)
    except ValueError as exc:
        raise NonHexCharacter(str(exc)) from exc


def disassemble(bytecode: str | bytes) -> list[Instruction]:
    """Linear sweep over runtime bytecode from offset 0.

    PUSHn consumes n operand bytes; a PUSH cut short by end-of-code keeps its
    short operand and is flagged truncated. Unassigned bytes become
    INVALID_0xXX. Every input byte is accounted for exactly once.
    """
    code = parse_hex(bytecode) if isinstance(bytecode, str) else bytes(bytecode)
    instructions: list[Instruction] = []
    offset = 0
    n = len(code)
    while offset < n:
        byte = code[offset]
        entry = OPCODE_TABLE.get(byte)
        if entry is None:
            instructions.append(Instruction(offset, f"INVALID_0x{byte:02X}"))
            offset += 1
            continue
        name, width = entry
        operand = code[offset + 1 : offset + 1 + width]
        instructions.append(
            Instruction(offset, name, operand, truncated=len(operand) < width)
        )
        offset += 1 + len(operand)
    return instructions


def simplify_opcodes(instructions: list[Instruction]) -> OpcodeSequence:
    """Collapse DUP/SWAP/PUSH5-32/LOG1-4 families and drop operands."""
    return OpcodeSequence(
        mnemonics=[SIMPLIFY_MAP.get(ins.mnemonic, ins.mnemonic) for ins in instructions]
    )


def simplify_mnemonic(mnemonic: str) -> str:
    return SIMPLIFY_MAP.get(mnemonic, mnemonic)


def tokenize_and_pad(
    seq: OpcodeSequence, vocab: OpcodeVocab, max_len: int = MAX_SEQUENCE_LEN
) -> TokenIdSequence:
    """Map mnemonics to ids, truncate to the first max_len, right-pad with 0."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if not vocab.ids:
        raise EmptyVocab("opcode vocabulary is empty")
    ids = [vocab.id_for(m) for m in seq.mnemonics[:max_len]]
    ids.extend([PAD_ID] * (max_len - len(ids)))
    return TokenIdSequence(ids=ids)


def assemble(program: list[str | tuple[str, int | bytes]]) -> str:
    """Inverse of disassemble for tests and fixtures.

    Items are either a bare mnemonic or (PUSHn, operand) where the operand is
    an int or bytes padded/validated to the push width.
    """
    out = bytearray()
    for item in program:
        if isinstance(item, str):
            name, operand = item, b""
        else:
            name, raw = item
            width = OPCODE_TABLE[MNEMONIC_TO_BYTE[name]][1]
            operand = raw.to_bytes(width, "big") if isinstance(raw, int) else bytes(raw)
            if len(operand) != width:
                raise ValueError(f"{name} needs a {width}-byte operand, got {len(operand)}")
        out.append(MNEMONIC_TO_BYTE[name])
        out.extend(operand)
    return out.hex()
