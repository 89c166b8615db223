from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scvd.evmcode import (
    OPCODE_TABLE,
    EmptyVocab,
    Instruction,
    NonHexCharacter,
    OddHexLength,
    OpcodeSequence,
    OpcodeVocab,
    assemble,
    disassemble,
    functional_group,
    simplify_opcodes,
    tokenize_and_pad,
)


def test_disassemble_push_add():
    ins = disassemble("6001600201")
    assert [(i.offset, i.mnemonic, i.operand.hex()) for i in ins] == [
        (0, "PUSH1", "01"),
        (2, "PUSH1", "02"),
        (4, "ADD", ""),
    ]


def test_disassemble_empty():
    assert disassemble("") == []


def test_designated_invalid_byte():
    ins = disassemble("fe")
    assert len(ins) == 1
    assert ins[0].mnemonic == "INVALID_0xFE"
    assert ins[0].offset == 0


def test_0x_prefix_accepted():
    assert disassemble("0x00")[0].mnemonic == "STOP"


def test_truncated_push_kept_and_flagged():
    ins = disassemble("61aa")
    assert len(ins) == 1
    assert ins[0].mnemonic == "PUSH2"
    assert ins[0].operand == b"\xaa"
    assert ins[0].truncated
    assert ins[0].size == 2


def test_odd_hex_rejected():
    with pytest.raises(OddHexLength):
        disassemble("600")


def test_non_hex_rejected():
    with pytest.raises(NonHexCharacter):
        disassemble("60zz")


def test_offsets_strictly_increasing():
    ins = disassemble("7f" + "00" * 32 + "01")
    assert [i.offset for i in ins] == [0, 33]


@settings(max_examples=300)
@given(st.binary(max_size=512))
def test_disassembler_totality_and_byte_conservation(code):
    ins = disassemble(code)
    assert sum(i.size for i in ins) == len(code)
    offsets = [i.offset for i in ins]
    assert offsets == sorted(set(offsets))


def test_simplify_collapsed_families():
    ins = [
        Instruction(0, "DUP3"),
        Instruction(1, "SWAP16"),
        Instruction(2, "PUSH32", b"\x00" * 32),
        Instruction(35, "LOG2"),
    ]
    assert simplify_opcodes(ins).mnemonics == ["DUP", "SWAP", "PUSH", "LOG"]


def test_simplify_keeps_low_families_distinct():
    ins = [Instruction(0, "PUSH1", b"\x01"), Instruction(2, "PUSH4", b"\x00" * 4), Instruction(7, "LOG0")]
    assert simplify_opcodes(ins).mnemonics == ["PUSH1", "PUSH4", "LOG0"]


def test_simplify_identity_outside_families():
    ins = [Instruction(0, "ADD"), Instruction(1, "MSTORE"), Instruction(2, "JUMPDEST")]
    assert simplify_opcodes(ins).mnemonics == ["ADD", "MSTORE", "JUMPDEST"]


def test_simplify_idempotent_over_all_bytes():
    ins = disassemble(bytes(range(256)) + b"\x00" * 32)
    once = simplify_opcodes(ins).mnemonics
    again = [
        simplify_opcodes([Instruction(0, name)]).mnemonics[0] for name in once
    ]
    assert once == again


def test_simplified_stream_has_no_numbered_family_members():
    ins = disassemble(bytes(range(256)) + b"\x00" * 32)
    banned = (
        {f"DUP{i}" for i in range(1, 17)}
        | {f"SWAP{i}" for i in range(1, 17)}
        | {f"PUSH{i}" for i in range(5, 33)}
        | {f"LOG{i}" for i in range(1, 5)}
    )
    assert not banned & set(simplify_opcodes(ins).mnemonics)


@pytest.fixture()
def vocab():
    ins = disassemble(bytes(range(96)))
    return OpcodeVocab.fit([simplify_opcodes(ins)])


def test_tokenize_short_sequence_padded(vocab):
    seq = OpcodeSequence(["ADD", "MUL", "SUB", "DIV", "STOP"])
    tokens = tokenize_and_pad(seq, vocab)
    assert len(tokens.ids) == 200
    assert tokens.ids[5:] == [0] * 195
    assert all(i > 0 for i in tokens.ids[:5])


def test_tokenize_exact_boundary(vocab):
    seq = OpcodeSequence(["ADD"] * 200)
    tokens = tokenize_and_pad(seq, vocab)
    assert len(tokens.ids) == 200
    assert 0 not in tokens.ids


def test_tokenize_truncates_to_head(vocab):
    mnemonics = ["ADD", "MUL", "SUB", "DIV", "MOD"] * 70  # 350 tokens
    tokens = tokenize_and_pad(OpcodeSequence(mnemonics), vocab)
    expected = [vocab.id_for(m) for m in mnemonics[:200]]
    assert tokens.ids == expected


def test_tokenize_unknown_mnemonic_gets_reserved_id(vocab):
    tokens = tokenize_and_pad(OpcodeSequence(["NOT_AN_OPCODE"]), vocab)
    assert tokens.ids[0] == vocab.unk_id
    assert vocab.unk_id == len(vocab.ids) + 1


def test_tokenize_length_sweep(vocab):
    for n in range(1001):
        tokens = tokenize_and_pad(OpcodeSequence(["ADD"] * n), vocab)
        assert len(tokens.ids) == 200


def test_empty_vocab_rejected():
    with pytest.raises(EmptyVocab):
        tokenize_and_pad(OpcodeSequence(["ADD"]), OpcodeVocab())


def test_vocab_fit_is_deterministic_and_one_based():
    seqs = [OpcodeSequence(["STOP", "ADD"]), OpcodeSequence(["ADD", "CALLER"])]
    vocab = OpcodeVocab.fit(seqs)
    assert vocab.ids == {"ADD": 1, "CALLER": 2, "STOP": 3}
    assert vocab.num_ids == 5


def test_vocab_json_roundtrip(vocab):
    loaded = OpcodeVocab.from_json(vocab.to_json())
    assert loaded.ids == vocab.ids


def test_functional_group_annotation():
    assert functional_group("ADD") == "stop-arithmetic"
    assert functional_group("CALLER") == "environment"
    assert functional_group("PUSH17") == "push"
    assert functional_group("LOG0") == "logging"
    assert functional_group("SELFDESTRUCT") == "system"
    assert functional_group("INVALID_0xFE") == "invalid"
    for _, (name, _w) in OPCODE_TABLE.items():
        assert functional_group(name) != "invalid", name


def _assemblable_ops():
    names = [name for _, (name, width) in sorted(OPCODE_TABLE.items()) if width == 0]
    pushes = [
        (f"PUSH{w}", st.integers(min_value=0, max_value=2 ** (8 * w) - 1))
        for w in (1, 2, 4)
    ]
    plain = st.sampled_from(names)
    push = st.one_of(*[st.tuples(st.just(n), arg) for n, arg in pushes])
    return st.lists(st.one_of(plain, push), max_size=64)


@settings(max_examples=200)
@given(_assemblable_ops())
def test_assemble_disassemble_roundtrip(program):
    hex_code = assemble(program)
    ins = disassemble(hex_code)
    rebuilt = [
        i.mnemonic if not i.operand else (i.mnemonic, int.from_bytes(i.operand, "big"))
        for i in ins
    ]
    assert rebuilt == program
