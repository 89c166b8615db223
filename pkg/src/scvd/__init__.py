"""scvd: smart-contract vulnerability detection from three views of a
contract (cleaned source text, simplified opcode sequences, and the bytecode
control-flow graph) fused by a multi-branch neural classifier."""

__version__ = "0.1.0"

from .cleaning import clean_source, normalize_whitespace, strip_comments
from .corpus import ContractRecord, DatasetSplit, Label, Provenance, load_manifest, stratified_split
from .cfg import ControlFlowGraph, GraphTensors, build_cfg, emit_dot, encode_graph
from .evmcode import (
    Instruction,
    OpcodeSequence,
    OpcodeVocab,
    TokenIdSequence,
    disassemble,
    simplify_opcodes,
    tokenize_and_pad,
)
from .models import ModelVariantConfig, VariantModel, assemble_variant
from .training import EvaluationReport, TrainingHyper, evaluate, run_ablation, train

__all__ = [
    "__version__",
    "clean_source",
    "normalize_whitespace",
    "strip_comments",
    "ContractRecord",
    "DatasetSplit",
    "Label",
    "Provenance",
    "load_manifest",
    "stratified_split",
    "ControlFlowGraph",
    "GraphTensors",
    "build_cfg",
    "emit_dot",
    "encode_graph",
    "Instruction",
    "OpcodeSequence",
    "OpcodeVocab",
    "TokenIdSequence",
    "disassemble",
    "simplify_opcodes",
    "tokenize_and_pad",
    "ModelVariantConfig",
    "VariantModel",
    "assemble_variant",
    "EvaluationReport",
    "TrainingHyper",
    "evaluate",
    "run_ablation",
    "train",
]
