from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
import torch

from scvd.cfg import GraphTensors
from scvd.embeddings import LocalEmbeddingProvider
from scvd.evmcode import OpcodeVocab
from scvd.training import FeatureDataset

REPO_ROOT = Path(__file__).resolve().parents[1]
SMOKE_MANIFEST = REPO_ROOT / "data" / "smoke" / "manifest.jsonl"

CLASS_WORDS = (
    ("overflow", "unchecked", "multiply", "accrue"),
    ("reentrancy", "callvalue", "withdraw", "external"),
    ("guarded", "require", "ownable", "register"),
)


@pytest.fixture(scope="session")
def smoke_manifest() -> Path:
    assert SMOKE_MANIFEST.exists(), "bundled smoke corpus is missing"
    return SMOKE_MANIFEST


@pytest.fixture()
def synthetic_vocab() -> OpcodeVocab:
    return OpcodeVocab(ids={"ADD": 1, "CALL": 2, "STOP": 3, "PUSH1": 4, "JUMPDEST": 5})


def synthetic_dataset(
    per_class: int, vocab: OpcodeVocab, seed: int = 7, num_classes: int = 3
) -> FeatureDataset:
    """Strongly separable three-class toy data across all three modalities."""
    provider = LocalEmbeddingProvider(seed=seed)
    ids: list[str] = []
    labels: dict[str, int] = {}
    dataset = FeatureDataset(ids=ids, labels=labels)
    for k in range(num_classes):
        words = CLASS_WORDS[k % len(CLASS_WORDS)]
        for j in range(per_class):
            rid = f"syn-{k}-{j}"
            ids.append(rid)
            labels[rid] = k
            dataset.texts[rid] = "contract T { " + " ".join(words * 4) + f" v{j % 2} }}"
            tokens = np.zeros(200, dtype="<i4")
            tokens[:60] = k + 1
            tokens[60:70] = (j % 2) + 1
            dataset.token_ids[rid] = tokens
            n = 2 + k
            feats = np.stack(
                [provider.embed_text(f"class{k} block{m}") for m in range(n)]
            ).astype(np.float32)
            if n > 1:
                edge = np.array([list(range(n - 1)), list(range(1, n))], dtype=np.int64)
            else:
                edge = np.zeros((2, 0), dtype=np.int64)
            dataset.graphs[rid] = GraphTensors(node_features=feats, edge_index=edge)
    return dataset


def random_graph(rng: np.random.Generator, n_nodes: int) -> GraphTensors:
    feats = rng.standard_normal((n_nodes, 1536)).astype(np.float32)
    if n_nodes > 1:
        edge = np.array(
            [list(range(n_nodes - 1)), list(range(1, n_nodes))], dtype=np.int64
        )
    else:
        edge = np.zeros((2, 0), dtype=np.int64)
    return GraphTensors(node_features=feats, edge_index=edge)


def write_stub_solc(directory: Path) -> Path:
    """Fake Solidity compiler honoring the combined-JSON contract.

    Sources containing SYNTAX_ERROR fail with a diagnostic; sources containing
    NEED_OTHER_VERSION fail with a version complaint; anything else compiles
    to a fixed tiny runtime.
    """
    stub = directory / "fake-solc"
    stub.write_text(
        "#!/usr/bin/env python3\n"
        "import json, sys\n"
        "path = sys.argv[-1]\n"
        "src = open(path).read()\n"
        "if 'SYNTAX_ERROR' in src:\n"
        "    sys.stderr.write(path + ': ParserError: expected identifier\\n')\n"
        "    sys.exit(1)\n"
        "if 'NEED_OTHER_VERSION' in src:\n"
        "    sys.stderr.write('Error: source requires different compiler version\\n')\n"
        "    sys.exit(1)\n"
        "out = {'contracts': {path + ':Stub': {'bin': '600a600c600039600af300',\n"
        "       'bin-runtime': '60016002015b00'}}, 'version': 'stub'}\n"
        "print(json.dumps(out))\n",
        encoding="utf-8",
    )
    stub.chmod(0o755)
    return stub


def seeded_model(config, vocab=None, seed: int = 0):
    from scvd.models import assemble_variant

    torch.manual_seed(seed)
    return assemble_variant(config, vocab=vocab)


collect_ignore: list[str] = []
if sys.platform == "win32":  # the stub compiler relies on shebang execution
    collect_ignore.append("test_solc.py")
