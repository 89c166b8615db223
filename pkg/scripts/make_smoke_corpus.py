#!/usr/bin/env python3
"""Regenerate the bundled 30-contract smoke corpus under data/smoke/.

Each record gets a small Solidity source (with comments and sloppy whitespace
so the cleaning stage has work to do) and hand-assembled runtime bytecode in
the manifest, so the end-to-end pipeline runs without a Solidity compiler.
Deterministic: rerunning produces byte-identical output.
"""
from __future__ import annotations

import json
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from scvd.evmcode import MNEMONIC_TO_BYTE, OPCODE_TABLE  # noqa: E402

OUT_DIR = Path(__file__).resolve().parents[1] / "data" / "smoke"

ARITH_BODY_OPS = ["ADD", "MUL", "SUB", "DIV", "ADDMOD", "MULMOD", "EXP", "MOD"]
REENT_BODY_OPS = ["CALLER", "BALANCE", "GAS", "CALLVALUE", "CALL", "EXTCODESIZE"]
CLEAN_BODY_OPS = ["TIMESTAMP", "NUMBER", "POP", "PC", "MSIZE", "COINBASE"]


def assemble_with_labels(items: list) -> str:
    """Two-pass mini assembler: items are mnemonics, ("PUSH1", int),
    ("PUSH1", "@label") references, or ("label", name) markers."""
    offsets: dict[str, int] = {}
    pc = 0
    for item in items:
        if isinstance(item, tuple) and item[0] == "label":
            offsets[item[1]] = pc
            continue
        name = item if isinstance(item, str) else item[0]
        pc += 1 + OPCODE_TABLE[MNEMONIC_TO_BYTE[name]][1]
    out = bytearray()
    for item in items:
        if isinstance(item, tuple) and item[0] == "label":
            continue
        if isinstance(item, str):
            out.append(MNEMONIC_TO_BYTE[item])
            continue
        name, arg = item
        width = OPCODE_TABLE[MNEMONIC_TO_BYTE[name]][1]
        value = offsets[arg[1:]] if isinstance(arg, str) else arg
        out.append(MNEMONIC_TO_BYTE[name])
        out.extend(value.to_bytes(width, "big"))
    return out.hex()


def make_bytecode(rng: random.Random, label: str) -> str:
    body_ops = {
        "arithmetic": ARITH_BODY_OPS,
        "reentrancy": REENT_BODY_OPS,
        "clean": CLEAN_BODY_OPS,
    }[label]
    body = []
    for op in rng.sample(body_ops, k=rng.randint(4, 6)):
        if op == "CALL":
            # CALL wants 7 stack slots; push a plausible frame first.
            body.extend(
                [("PUSH1", 0x00)] * 5 + [("PUSH1", 0x40), "CALLER", "GAS", "CALL"]
            )
        elif op in ("ADD", "MUL", "SUB", "DIV", "MOD", "EXP"):
            body.extend([("PUSH1", rng.randint(1, 200)), ("PUSH1", rng.randint(1, 200)), op])
        elif op in ("ADDMOD", "MULMOD"):
            body.extend([("PUSH1", rng.randint(1, 99)) for _ in range(3)] + [op])
        elif op in ("BALANCE", "EXTCODESIZE"):
            body.extend(["CALLER", op])
        else:
            body.append(op)
        body.append("POP")
    items = [
        ("PUSH1", 0x80), ("PUSH1", 0x40), "MSTORE",
        "CALLVALUE", "ISZERO", ("PUSH1", "@main"), "JUMPI",
        ("PUSH1", 0x00), "DUP1", "REVERT",
        ("label", "main"), "JUMPDEST",
        *body,
        "CALLDATASIZE", ("PUSH1", "@done"), "JUMPI",
        ("PUSH1", 0x00), ("PUSH1", 0x00), "RETURN",
        ("label", "done"), "JUMPDEST", "STOP",
    ]
    return assemble_with_labels(items)


ARITH_SNIPPETS = [
    "balances[msg.sender] += amount;",
    "totalSupply = totalSupply + minted * 2;",
    "uint256 reward = stake * rate / 100;",
    "counter = counter - burned;",
    "uint8 small = uint8(big);",
]
REENT_SNIPPETS = [
    '(bool ok, ) = msg.sender.call{value: amount}("");',
    "msg.sender.call.value(balances[msg.sender])();",
    "require(ok, \"transfer failed\");",
    "balances[msg.sender] = 0;",
    "payable(msg.sender).transfer(amount);",
]
CLEAN_SNIPPETS = [
    "require(amount > 0, \"zero amount\");",
    "require(msg.sender == owner);",
    "emit Transfer(msg.sender, to, amount);",
    "allowed[msg.sender][spender] = amount;",
    "owner = newOwner;",
]


def make_source(rng: random.Random, label: str, index: int) -> str:
    snippets = {
        "arithmetic": ARITH_SNIPPETS,
        "reentrancy": REENT_SNIPPETS,
        "clean": CLEAN_SNIPPETS,
    }[label]
    fn_names = {
        "arithmetic": ["mint", "accrue", "compound"],
        "reentrancy": ["withdraw", "refund", "claim"],
        "clean": ["approve", "transferOwnership", "register"],
    }[label]
    lines = [
        "pragma solidity ^0.8.0;",
        "",
        f"// Auto-generated fixture #{index:03d}  ",
        f"contract Smoke{index:03d} {{",
        "    mapping(address => uint256) balances;   // per-account ledger",
        "    uint256 totalSupply;",
        "    address owner;",
        "",
        "",
    ]
    for fn in rng.sample(fn_names, k=2):
        chosen = rng.sample(snippets, k=rng.randint(2, 3))
        lines.append(f"    /* {fn} entry point */")
        lines.append(f"    function {fn}(uint256 amount) public {{")
        for snippet in chosen:
            pad = " " * rng.randint(8, 12)
            lines.append(f"{pad}{snippet}")
        lines.append("    }")
        lines.append("")
        lines.append("")
    lines.append("}")
    lines.append("")
    return "\n".join(lines)


def main() -> None:
    rng = random.Random(2024)
    contracts_dir = OUT_DIR / "contracts"
    contracts_dir.mkdir(parents=True, exist_ok=True)
    labels = ["arithmetic"] * 10 + ["reentrancy"] * 10 + ["clean"] * 10
    manifest_lines = []
    for index, label in enumerate(labels, start=1):
        record_id = f"smoke-{index:03d}"
        source = make_source(rng, label, index)
        (contracts_dir / f"{record_id}.sol").write_text(source, encoding="utf-8")
        manifest_lines.append(
            json.dumps(
                {
                    "id": record_id,
                    "source_path": f"contracts/{record_id}.sol",
                    "label": label,
                    "provenance": "local",
                    "bytecode": make_bytecode(rng, label),
                },
                sort_keys=True,
            )
        )
    (OUT_DIR / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n")
    print(f"wrote {len(labels)} contracts to {OUT_DIR}")


if __name__ == "__main__":
    main()
