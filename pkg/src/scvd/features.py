"""Content-addressed feature store.

For every record the pipeline materializes cleaned source, the simplified
opcode stream (ops.txt), fixed-length token ids (ids.bin, 200 little-endian
int32), the control-flow graph (<id>.cfg.gv), and its node/edge tensors
(graph.npz) under workspace/features/<id>/. Inputs are hashed so unchanged
records are skipped on rerun; embeddings are the expensive part and must not
be recomputed across ablation variants.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import solc
from .cfg import GraphTensors, build_cfg, emit_dot, encode_graph
from .cleaning import clean_source
from .corpus import ContractRecord
from .evmcode import (
    MAX_SEQUENCE_LEN,
    OpcodeSequence,
    OpcodeVocab,
    disassemble,
    simplify_opcodes,
    tokenize_and_pad,
)
from .training import LABEL_INDEX, FeatureDataset

FORMAT_VERSION = 1


class FeatureDerivationFailed(RuntimeError):
    pass


@dataclass
class FeatureReport:
    ok: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def failure_fraction(self) -> float:
        total = len(self.ok) + len(self.skipped) + len(self.failures)
        return len(self.failures) / total if total else 0.0

    def to_json(self) -> dict:
        return {"ok": self.ok, "skipped": self.skipped, "failures": self.failures}


class FeatureStore:
    def __init__(self, workspace: str | Path):
        self.workspace = Path(workspace)
        self.features_dir = self.workspace / "features"
        self.vocab_path = self.workspace / "vocab.json"

    def record_dir(self, record_id: str) -> Path:
        return self.features_dir / record_id

    def artifact_paths(self, record_id: str) -> dict[str, Path]:
        base = self.record_dir(record_id)
        return {
            "cleaned": base / "cleaned.sol",
            "ops": base / "ops.txt",
            "ids": base / "ids.bin",
            "cfg": base / f"{record_id}.cfg.gv",
            "graph": base / "graph.npz",
            "meta": base / "meta.json",
        }

    # -- per-record pipeline ------------------------------------------------

    def materialize(
        self,
        records: list[ContractRecord],
        train_ids: list[str],
        provider,
        compiler_config: solc.CompilerConfig | None = None,
        collapse_spaces: bool = True,
        workers: int = 1,
    ) -> FeatureReport:
        """Run the full preprocessing pipeline, then fit the opcode vocabulary
        on the training split only and tokenize everything with it.
        """
        report = FeatureReport()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(
                    pool.map(
                        lambda r: self._materialize_one(
                            r, provider, compiler_config, collapse_spaces
                        ),
                        records,
                    )
                )
        else:
            outcomes = [
                self._materialize_one(r, provider, compiler_config, collapse_spaces)
                for r in records
            ]
        for record, outcome in zip(records, outcomes):
            if outcome == "ok":
                report.ok.append(record.id)
            elif outcome == "skipped":
                report.skipped.append(record.id)
            else:
                report.failures[record.id] = outcome

        usable = [r for r in records if r.id not in report.failures]
        train_set = set(train_ids)
        vocab = self._fit_vocab([r.id for r in usable if r.id in train_set])
        self._write_token_ids(usable, vocab)
        return report

    def _materialize_one(
        self,
        record: ContractRecord,
        provider,
        compiler_config: solc.CompilerConfig | None,
        collapse_spaces: bool,
    ) -> str:
        paths = self.artifact_paths(record.id)
        try:
            source = record.source_text
            input_hash = _input_hash(source, record.bytecode, collapse_spaces)
            meta = _read_meta(paths["meta"])
            phase_a = ("cleaned", "ops", "cfg", "graph")
            if meta.get("input_hash") == input_hash and all(
                paths[k].exists() for k in phase_a
            ):
                return "skipped"

            paths["meta"].parent.mkdir(parents=True, exist_ok=True)
            cleaned = clean_source(source, collapse_spaces=collapse_spaces)
            paths["cleaned"].write_text(cleaned.text, encoding="utf-8")

            runtime = self._resolve_bytecode(record, source, compiler_config, input_hash)
            instructions = disassemble(runtime)
            simplified = simplify_opcodes(instructions)
            paths["ops"].write_text("\n".join(simplified.mnemonics) + "\n", encoding="utf-8")

            graph = build_cfg(instructions)
            paths["cfg"].write_text(emit_dot(graph), encoding="utf-8")
            tensors = encode_graph(graph, provider)
            np.savez(
                paths["graph"],
                node_features=tensors.node_features,
                edge_index=tensors.edge_index,
            )
            meta = {"format": FORMAT_VERSION, "input_hash": input_hash}
            paths["meta"].write_text(json.dumps(meta, sort_keys=True))
            return "ok"
        except Exception as exc:  # noqa: BLE001 - per-record failures are collected
            return f"{type(exc).__name__}: {exc}"

    def _resolve_bytecode(
        self,
        record: ContractRecord,
        source: str,
        compiler_config: solc.CompilerConfig | None,
        input_hash: str,
    ) -> str:
        """Manifest bytecode wins; otherwise compile (cached in runtime.hex)."""
        if record.bytecode:
            return record.bytecode
        hex_path = self.record_dir(record.id) / "runtime.hex"
        meta = _read_meta(self.artifact_paths(record.id)["meta"])
        if hex_path.exists() and meta.get("input_hash") == input_hash:
            return hex_path.read_text().strip()
        compiled = solc.compile_source(source, compiler_config)
        hex_path.parent.mkdir(parents=True, exist_ok=True)
        hex_path.write_text(compiled.runtime + "\n", encoding="utf-8")
        return compiled.runtime

    # -- tokenization (vocabulary from the training split only) -------------

    def _fit_vocab(self, train_ids: list[str]) -> OpcodeVocab:
        sequences = []
        for record_id in sorted(train_ids):
            ops_path = self.artifact_paths(record_id)["ops"]
            if ops_path.exists():
                sequences.append(OpcodeSequence(ops_path.read_text().split()))
        vocab = OpcodeVocab.fit(sequences)
        payload = json.dumps(vocab.to_json(), sort_keys=True)
        if not self.vocab_path.exists() or self.vocab_path.read_text() != payload:
            self.workspace.mkdir(parents=True, exist_ok=True)
            self.vocab_path.write_text(payload)
        return vocab

    def load_vocab(self) -> OpcodeVocab:
        return OpcodeVocab.from_json(json.loads(self.vocab_path.read_text()))

    def _write_token_ids(self, records: list[ContractRecord], vocab: OpcodeVocab) -> None:
        vocab_hash = hashlib.sha256(
            json.dumps(vocab.to_json(), sort_keys=True).encode()
        ).hexdigest()
        for record in records:
            paths = self.artifact_paths(record.id)
            if not paths["ops"].exists():
                continue
            meta = _read_meta(paths["meta"])
            if meta.get("ids_vocab_hash") == vocab_hash and paths["ids"].exists():
                continue
            seq = OpcodeSequence(paths["ops"].read_text().split())
            tokens = tokenize_and_pad(seq, vocab, MAX_SEQUENCE_LEN)
            np.asarray(tokens.ids, dtype="<i4").tofile(paths["ids"])
            meta["ids_vocab_hash"] = vocab_hash
            paths["meta"].write_text(json.dumps(meta, sort_keys=True))

    # -- loading for training ------------------------------------------------

    def load_dataset(self, records: list[ContractRecord]) -> FeatureDataset:
        dataset = FeatureDataset(
            ids=[r.id for r in records],
            labels={r.id: LABEL_INDEX[r.label] for r in records},
        )
        for record in records:
            paths = self.artifact_paths(record.id)
            if paths["cleaned"].exists():
                dataset.texts[record.id] = paths["cleaned"].read_text(encoding="utf-8")
            if paths["ids"].exists():
                dataset.token_ids[record.id] = np.fromfile(paths["ids"], dtype="<i4")
            if paths["graph"].exists():
                with np.load(paths["graph"]) as doc:
                    dataset.graphs[record.id] = GraphTensors(
                        node_features=doc["node_features"], edge_index=doc["edge_index"]
                    )
        return dataset


def _input_hash(source: str, bytecode: str | None, collapse_spaces: bool) -> str:
    digest = hashlib.sha256()
    digest.update(f"v{FORMAT_VERSION}|collapse={int(collapse_spaces)}|".encode())
    digest.update(source.encode("utf-8"))
    digest.update(b"|")
    digest.update((bytecode or "").encode())
    return digest.hexdigest()


def _read_meta(path: Path) -> dict:
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError:
        return {}


def derive_single(
    source: str,
    bytecode: str | None,
    provider,
    vocab: OpcodeVocab | None,
    compiler_config: solc.CompilerConfig | None = None,
    collapse_spaces: bool = True,
) -> tuple[str, np.ndarray | None, GraphTensors]:
    """Feature derivation for one ad-hoc contract (the predict path)."""
    try:
        cleaned = clean_source(source, collapse_spaces=collapse_spaces)
        if not bytecode:
            bytecode = solc.compile_source(source, compiler_config).runtime
        instructions = disassemble(bytecode)
        token_ids = None
        if vocab is not None:
            seq = simplify_opcodes(instructions)
            token_ids = np.asarray(
                tokenize_and_pad(seq, vocab, MAX_SEQUENCE_LEN).ids, dtype="<i4"
            )
        tensors = encode_graph(build_cfg(instructions), provider)
    except Exception as exc:
        raise FeatureDerivationFailed(f"{type(exc).__name__}: {exc}") from exc
    return cleaned.text, token_ids, tensors
