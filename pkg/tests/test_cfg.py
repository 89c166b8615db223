from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scvd.cfg import (
    ProviderFailure,
    Terminator,
    build_cfg,
    emit_dot,
    encode_graph,
)
from scvd.embeddings import LocalEmbeddingProvider
from scvd.evmcode import disassemble


def test_empty_graph():
    graph = build_cfg([])
    assert graph.blocks == [] and graph.edges == [] and graph.unresolved_jumps == []


def test_static_jump_three_blocks():
    # PUSH1 0x04, JUMP, STOP, JUMPDEST, STOP
    graph = build_cfg(disassemble("600456005b00"))
    assert len(graph.blocks) == 3
    assert [(e.src, e.dst, e.kind) for e in graph.edges] == [(0, 2, "jump")]
    assert graph.unresolved_jumps == []
    assert graph.blocks[0].terminator is Terminator.JUMP
    assert graph.blocks[1].terminator is Terminator.STOP
    assert graph.blocks[2].starts_with_jumpdest


def test_dynamic_jumpi_unresolved_keeps_false_edge():
    # CALLVALUE, GAS, JUMPI, STOP, JUMPDEST, STOP — the value before JUMPI is
    # not a PUSH, so the target is dynamic.
    graph = build_cfg(disassemble("345a57005b00"))
    assert len(graph.blocks) == 3
    assert graph.unresolved_jumps == [0]
    assert [(e.src, e.dst, e.kind) for e in graph.edges] == [(0, 1, "branch_false")]


def test_jumpi_with_static_target_gets_both_edges():
    # PUSH1 0x04 @0, JUMPI @2, STOP @3, JUMPDEST @4, STOP @5
    graph = build_cfg(disassemble("600457005b00"))
    kinds = sorted((e.src, e.dst, e.kind) for e in graph.edges)
    assert kinds == [(0, 1, "branch_false"), (0, 2, "branch_true")]
    assert graph.unresolved_jumps == []


def test_jump_to_non_jumpdest_is_unresolved():
    # PUSH1 0x03, JUMP, STOP — target 3 is not a JUMPDEST block start
    graph = build_cfg(disassemble("60035600"))
    assert graph.unresolved_jumps == [0]
    assert all(e.kind != "jump" for e in graph.edges)


def test_fallthrough_edge_into_jumpdest_block():
    # ADD, JUMPDEST, STOP: block split at JUMPDEST, fallthrough edge
    graph = build_cfg(disassemble("015b00"))
    assert len(graph.blocks) == 2
    assert [(e.src, e.dst, e.kind) for e in graph.edges] == [(0, 1, "fallthrough")]
    assert graph.blocks[0].terminator is Terminator.FALLTHROUGH


def test_invalid_opcode_terminates_block():
    graph = build_cfg(disassemble("fe00"))
    assert len(graph.blocks) == 2
    assert graph.blocks[0].terminator is Terminator.INVALID
    assert graph.edges == []  # invalid aborts; no fallthrough


def _partition_holds(graph, instructions):
    flat = [ins for block in graph.blocks for ins in block.instructions]
    return flat == instructions


def _jump_edges_hit_jumpdest(graph):
    by_id = {b.id: b for b in graph.blocks}
    return all(
        by_id[e.dst].starts_with_jumpdest
        for e in graph.edges
        if e.kind in ("jump", "branch_true")
    )


def test_partition_and_interior_jumpdest_invariants():
    code = "600456005b00345a57005b00015b00"
    instructions = disassemble(code)
    graph = build_cfg(instructions)
    assert _partition_holds(graph, instructions)
    assert _jump_edges_hit_jumpdest(graph)
    for block in graph.blocks:
        assert all(i.mnemonic != "JUMPDEST" for i in block.instructions[1:])


@settings(max_examples=300)
@given(st.binary(max_size=256))
def test_fuzz_build_cfg_invariants(code):
    instructions = disassemble(code)
    graph = build_cfg(instructions)
    assert _partition_holds(graph, instructions)
    assert _jump_edges_hit_jumpdest(graph)
    valid = set(range(len(graph.blocks)))
    for edge in graph.edges:
        assert edge.src in valid and edge.dst in valid


def test_emit_dot_empty():
    dot = emit_dot(build_cfg([]))
    assert dot.replace(" ", "").replace("\n", "").startswith("digraphcfg{")


def test_emit_dot_three_block_example():
    graph = build_cfg(disassemble("600456005b00"))
    dot = emit_dot(graph)
    assert dot.count("[label=") == 3
    assert 'b0 -> b2 [kind="jump"]' in dot
    assert "PUSH1 0x04" in dot


def test_emit_dot_deterministic():
    graph = build_cfg(disassemble("600456005b00345a57005b00"))
    assert emit_dot(graph) == emit_dot(graph)


def test_encode_graph_shapes():
    provider = LocalEmbeddingProvider(seed=1)
    graph = build_cfg(disassemble("600456005b00"))
    tensors = encode_graph(graph, provider)
    assert tensors.node_features.shape == (3, 1536)
    assert tensors.node_features.dtype == np.float32
    assert tensors.edge_index.shape == (2, 1)
    assert tensors.edge_index[:, 0].tolist() == [0, 2]


def test_encode_graph_deterministic_for_identical_block_texts():
    provider = LocalEmbeddingProvider(seed=1)
    graph_a = build_cfg(disassemble("600456005b00"))
    graph_b = build_cfg(disassemble("600456005b00"))
    ta = encode_graph(graph_a, provider)
    tb = encode_graph(graph_b, provider)
    assert np.array_equal(ta.node_features, tb.node_features)
    assert np.array_equal(ta.edge_index, tb.edge_index)


def test_encode_empty_graph_sentinel():
    provider = LocalEmbeddingProvider(seed=1)
    tensors = encode_graph(build_cfg([]), provider)
    assert tensors.node_features.shape == (1, 1536)
    assert tensors.edge_index.shape == (2, 0)


def test_encode_graph_wraps_provider_errors():
    class Exploding:
        def embed_batch(self, texts):
            raise RuntimeError("boom")

    with pytest.raises(ProviderFailure):
        encode_graph(build_cfg(disassemble("00")), Exploding())


def test_block_text_uses_simplified_mnemonics():
    graph = build_cfg(disassemble("8100"))  # DUP2, STOP
    assert graph.blocks[0].text() == "0x0: DUP STOP"
