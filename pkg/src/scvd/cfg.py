"""Control-flow graph construction from disassembled runtime bytecode.

Blocks split at JUMPDEST and after terminators. Jump targets are resolved
statically only: when the instruction immediately preceding a JUMP/JUMPI in
the linear sweep is a PUSH, its operand is taken as the target offset. Jumps
whose target cannot be resolved to a JUMPDEST-starting block are recorded in
``unresolved_jumps`` rather than guessed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .evmcode import Instruction, simplify_mnemonic

EMBED_DIM = 1536
EMPTY_CFG_TEXT = "EMPTY_CFG"


class Terminator(Enum):
    JUMP = "jump"
    JUMPI = "jumpi"
    STOP = "stop"
    RETURN = "return"
    REVERT = "revert"
    SELFDESTRUCT = "selfdestruct"
    INVALID = "invalid"
    FALLTHROUGH = "fallthrough"


_TERMINATOR_FOR = {
    "JUMP": Terminator.JUMP,
    "JUMPI": Terminator.JUMPI,
    "STOP": Terminator.STOP,
    "RETURN": Terminator.RETURN,
    "REVERT": Terminator.REVERT,
    "SELFDESTRUCT": Terminator.SELFDESTRUCT,
}


def _terminator_kind(mnemonic: str) -> Terminator | None:
    if mnemonic in _TERMINATOR_FOR:
        return _TERMINATOR_FOR[mnemonic]
    if mnemonic.startswith("INVALID_"):
        return Terminator.INVALID
    return None


@dataclass
class BasicBlock:
    id: int
    start_offset: int
    instructions: list[Instruction]
    terminator: Terminator

    @property
    def starts_with_jumpdest(self) -> bool:
        return bool(self.instructions) and self.instructions[0].mnemonic == "JUMPDEST"

    def text(self) -> str:
        """Deterministic rendering used for node embeddings: start offset plus
        the simplified mnemonic list."""
        mnemonics = " ".join(simplify_mnemonic(ins.mnemonic) for ins in self.instructions)
        return f"0x{self.start_offset:x}: {mnemonics}"


@dataclass
class Edge:
    src: int
    dst: int
    kind: str  # jump | branch_true | branch_false | fallthrough


@dataclass
class ControlFlowGraph:
    blocks: list[BasicBlock] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    unresolved_jumps: list[int] = field(default_factory=list)


@dataclass
class GraphTensors:
    node_features: np.ndarray  # float32, N x 1536
    edge_index: np.ndarray  # int64, 2 x E


class ProviderFailure(RuntimeError):
    def __init__(self, block_id: int, cause: Exception):
        super().__init__(f"embedding failed for block {block_id}: {cause}")
        self.block_id = block_id


def build_cfg(instructions: list[Instruction]) -> ControlFlowGraph:
    if not instructions:
        return ControlFlowGraph()

    # Partition into blocks: a block begins at instruction 0, at a JUMPDEST,
    # or right after a terminator.
    blocks: list[BasicBlock] = []
    last_index: list[int] = []  # index into `instructions` of each block's last op
    current: list[Instruction] = []
    for i, ins in enumerate(instructions):
        if ins.mnemonic == "JUMPDEST" and current:
            blocks.append(_close_block(len(blocks), current, Terminator.FALLTHROUGH))
            last_index.append(i - 1)
            current = []
        current.append(ins)
        kind = _terminator_kind(ins.mnemonic)
        if kind is not None:
            blocks.append(_close_block(len(blocks), current, kind))
            last_index.append(i)
            current = []
    if current:
        blocks.append(_close_block(len(blocks), current, Terminator.FALLTHROUGH))
        last_index.append(len(instructions) - 1)

    jumpdest_block_at = {
        block.start_offset: block.id for block in blocks if block.starts_with_jumpdest
    }

    edges: list[Edge] = []
    unresolved: list[int] = []
    for block in blocks:
        term = block.terminator
        if term in (Terminator.JUMP, Terminator.JUMPI):
            target = _static_target(instructions, last_index[block.id])
            dst = jumpdest_block_at.get(target) if target is not None else None
            if dst is not None:
                kind = "jump" if term is Terminator.JUMP else "branch_true"
                edges.append(Edge(block.id, dst, kind))
            else:
                unresolved.append(block.id)
            if term is Terminator.JUMPI and block.id + 1 < len(blocks):
                edges.append(Edge(block.id, block.id + 1, "branch_false"))
        elif term is Terminator.FALLTHROUGH and block.id + 1 < len(blocks):
            edges.append(Edge(block.id, block.id + 1, "fallthrough"))
    return ControlFlowGraph(blocks=blocks, edges=edges, unresolved_jumps=unresolved)


def _close_block(block_id: int, instructions: list[Instruction], kind: Terminator) -> BasicBlock:
    return BasicBlock(
        id=block_id,
        start_offset=instructions[0].offset,
        instructions=list(instructions),
        terminator=kind,
    )


def _static_target(instructions: list[Instruction], jump_pos: int) -> int | None:
    if jump_pos == 0:
        return None
    prev = instructions[jump_pos - 1]
    if prev.mnemonic.startswith("PUSH") and prev.mnemonic != "PUSH":
        return int.from_bytes(prev.operand, "big")
    return None


def emit_dot(cfg: ControlFlowGraph) -> str:
    """Render the graph as deterministic Graphviz DOT (nodes by id, edges in
    lexicographic order); node labels are the start offset plus one mnemonic
    per line.
    """
    lines = ["digraph cfg {", "  node [shape=box];"]
    for block in cfg.blocks:
        label_parts = [f"0x{block.start_offset:x}"] + [
            str(ins) for ins in block.instructions
        ]
        label = "\\n".join(label_parts)
        lines.append(f'  b{block.id} [label="{label}"];')
    for edge in sorted(cfg.edges, key=lambda e: (e.src, e.dst, e.kind)):
        lines.append(f'  b{edge.src} -> b{edge.dst} [kind="{edge.kind}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def encode_graph(cfg: ControlFlowGraph, provider) -> GraphTensors:
    """Embed each block's text rendering into a node-feature row and collect
    the directed edge list. An empty graph gets one synthetic node embedded
    from EMPTY_CFG_TEXT so downstream pooling stays defined.
    """
    texts = [block.text() for block in cfg.blocks] or [EMPTY_CFG_TEXT]
    try:
        vectors = provider.embed_batch(texts)
    except Exception as exc:
        block_id = getattr(exc, "index", None)
        raise ProviderFailure(block_id if block_id is not None else -1, exc) from exc
    node_features = np.asarray(vectors, dtype=np.float32).reshape(len(texts), EMBED_DIM)
    if cfg.edges:
        edge_index = np.array(
            [[e.src for e in cfg.edges], [e.dst for e in cfg.edges]], dtype=np.int64
        )
    else:
        edge_index = np.zeros((2, 0), dtype=np.int64)
    return GraphTensors(node_features=node_features, edge_index=edge_index)
