"""Three-branch classifier and its seven ablation variants.

Branches: a transformer text encoder over cleaned source, a two-layer
bidirectional LSTM over tokenized opcode sequences, and a three-layer graph
convolution stack over CFG node embeddings. Branch outputs are concatenated
and pushed through a 1-D convolutional fusion head ending in a softmax over
the three classes. Unimodal variants attach the same fusion head to a single
branch; M1/M2/M3 are the pairwise combinations and "vulnsense" is all three.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .cfg import EMBED_DIM, GraphTensors
from .evmcode import OpcodeVocab

VARIANTS = ("bert", "bilstm", "gnn", "m1", "m2", "m3", "vulnsense")
VARIANT_DISPLAY = {
    "bert": "BERT",
    "bilstm": "BiLSTM",
    "gnn": "GNN",
    "m1": "M1",
    "m2": "M2",
    "m3": "M3",
    "vulnsense": "VulnSense",
}
ACTIVE_BRANCHES = {
    "bert": ("text",),
    "bilstm": ("opcode",),
    "gnn": ("graph",),
    "m1": ("text", "opcode"),
    "m2": ("text", "graph"),
    "m3": ("opcode", "graph"),
    "vulnsense": ("text", "opcode", "graph"),
}

PRESET_TINY = "tiny-test"
PRESET_PRETRAINED = "pretrained-12-layer"


class ConfigError(ValueError):
    pass


class DimMismatch(ValueError):
    pass


class FeatureWidthMismatch(ValueError):
    pass


class CheckpointUnavailable(RuntimeError):
    pass


class CheckpointMismatch(RuntimeError):
    pass


@dataclass
class ModelVariantConfig:
    variant: str = "vulnsense"
    d_bert_out: int = 66
    d_lstm_out: int = 64
    d_gnn_out: int = 64
    lstm_units: tuple[int, int] = (128, 64)
    opcode_embed_dim: int = 200
    gnn_hidden_channels: int = 64
    encoder_preset: str = PRESET_TINY
    encoder_checkpoint: str = "bert-base-uncased"
    num_classes: int = 3
    dropout: float = 0.03
    tiny_vocab_size: int = 4096
    tiny_max_tokens: int = 256

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.encoder_preset not in (PRESET_TINY, PRESET_PRETRAINED):
            raise ConfigError(f"unknown encoder preset {self.encoder_preset!r}")
        self.lstm_units = tuple(self.lstm_units)
        for name in ("d_bert_out", "d_lstm_out", "d_gnn_out", "opcode_embed_dim",
                     "gnn_hidden_channels", "num_classes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def active_branches(self) -> tuple[str, ...]:
        return ACTIVE_BRANCHES[self.variant]

    def branch_dim(self, kind: str) -> int:
        return {"text": self.d_bert_out, "opcode": self.d_lstm_out, "graph": self.d_gnn_out}[kind]

    def fusion_input_len(self) -> int:
        return sum(self.branch_dim(kind) for kind in self.active_branches())

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["lstm_units"] = list(self.lstm_units)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ModelVariantConfig":
        doc = dict(doc)
        if "lstm_units" in doc:
            doc["lstm_units"] = tuple(doc["lstm_units"])
        return cls(**doc)


@dataclass
class FeatureBatch:
    """Inputs for one forward pass; only the kinds a variant needs are set."""

    texts: list[str] | None = None
    token_ids: torch.Tensor | None = None  # long, B x 200
    graphs: list[GraphTensors] | None = None

    def size(self) -> int:
        for part in (self.texts, self.graphs):
            if part is not None:
                return len(part)
        if self.token_ids is not None:
            return self.token_ids.shape[0]
        raise ValueError("empty feature batch")


_WORD_RE = re.compile(r"[A-Za-z_]\w*|\d+|\S")


class HashingTokenizer:
    """Deterministic hash-bucket tokenizer for the from-scratch encoder.

    Id 0 pads, id 1 is the leading summary token, word/punctuation tokens hash
    into [2, vocab_size).
    """

    PAD = 0
    CLS = 1

    def __init__(self, vocab_size: int, max_tokens: int):
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens

    def _token_id(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return 2 + int.from_bytes(digest, "big") % (self.vocab_size - 2)

    def encode_batch(self, texts: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
        rows = []
        for text in texts:
            ids = [self.CLS]
            for token in _WORD_RE.findall(text.lower()):
                if len(ids) >= self.max_tokens:
                    break
                ids.append(self._token_id(token))
            rows.append(ids)
        width = max(len(row) for row in rows)
        ids_tensor = torch.full((len(rows), width), self.PAD, dtype=torch.long)
        for i, row in enumerate(rows):
            ids_tensor[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        mask = ids_tensor != self.PAD
        return ids_tensor, mask


class TextBranch(nn.Module):
    """Cleaned source text -> d_bert_out vector.

    tiny-test builds a 2-layer, 128-hidden encoder from scratch;
    pretrained-12-layer loads an external 12-layer / 768-hidden checkpoint via
    transformers and trains the head only.
    """

    PRETRAINED_HIDDEN = 768
    TINY_HIDDEN = 128

    def __init__(self, config: ModelVariantConfig):
        super().__init__()
        self.preset = config.encoder_preset
        if self.preset == PRESET_TINY:
            self.tokenizer = HashingTokenizer(config.tiny_vocab_size, config.tiny_max_tokens)
            self.pooled_width = self.TINY_HIDDEN
            self.token_emb = nn.Embedding(config.tiny_vocab_size, self.TINY_HIDDEN, padding_idx=0)
            self.pos_emb = nn.Embedding(config.tiny_max_tokens, self.TINY_HIDDEN)
            layer = nn.TransformerEncoderLayer(
                d_model=self.TINY_HIDDEN,
                nhead=4,
                dim_feedforward=2 * self.TINY_HIDDEN,
                dropout=config.dropout,
                batch_first=True,
            )
            self.encoder = nn.TransformerEncoder(layer, num_layers=2, enable_nested_tensor=False)
        else:
            self._load_pretrained(config.encoder_checkpoint)
        self.head = nn.Linear(self.pooled_width, config.d_bert_out)

    def _load_pretrained(self, checkpoint: str) -> None:
        try:
            from transformers import AutoModel, AutoTokenizer

            self.hf_tokenizer = AutoTokenizer.from_pretrained(checkpoint)
            self.hf_encoder = AutoModel.from_pretrained(checkpoint)
        except Exception as exc:
            raise CheckpointUnavailable(
                f"cannot load pretrained encoder {checkpoint!r}: {exc}"
            ) from exc
        self.hf_encoder.requires_grad_(False)
        self.pooled_width = int(self.hf_encoder.config.hidden_size)

    def pool(self, texts: list[str]) -> torch.Tensor:
        if self.preset == PRESET_TINY:
            ids, mask = self.tokenizer.encode_batch(texts)
            positions = torch.arange(ids.shape[1], device=ids.device)
            hidden = self.token_emb(ids) + self.pos_emb(positions)[None, :, :]
            encoded = self.encoder(hidden, src_key_padding_mask=~mask)
            return encoded[:, 0]
        tokens = self.hf_tokenizer(
            texts, padding=True, truncation=True, return_tensors="pt"
        )
        with torch.no_grad():
            out = self.hf_encoder(**tokens)
        return out.last_hidden_state[:, 0]

    def forward(self, texts: list[str]) -> torch.Tensor:
        return F.relu(self.head(self.pool(texts)))


class OpcodeBranch(nn.Module):
    """Token-id sequence (length 200) -> d_lstm_out vector.

    Embedding, first bidirectional LSTM, an intermediate per-step dense layer
    carrying the dropout, second bidirectional LSTM, then a dense layer with
    rectification over the concatenated final hidden states. Pad ids embed
    like any token; no masking.
    """

    def __init__(self, config: ModelVariantConfig, num_token_ids: int):
        super().__init__()
        units1, units2 = config.lstm_units
        self.embedding = nn.Embedding(num_token_ids, config.opcode_embed_dim, padding_idx=0)
        self.lstm1 = nn.LSTM(
            config.opcode_embed_dim, units1, batch_first=True, bidirectional=True
        )
        self.inter = nn.Linear(2 * units1, units1)
        self.drop = nn.Dropout(config.dropout)
        self.lstm2 = nn.LSTM(units1, units2, batch_first=True, bidirectional=True)
        self.out = nn.Linear(2 * units2, config.d_lstm_out)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        hidden = self.embedding(token_ids)
        hidden, _ = self.lstm1(hidden)
        hidden = self.drop(self.inter(hidden))
        _, (h_n, _) = self.lstm2(hidden)
        final = torch.cat([h_n[0], h_n[1]], dim=1)
        return F.relu(self.out(final))


class GraphConv(nn.Module):
    """One graph convolution: symmetric-normalized message passing with self
    loops over the directed edge list, followed by a linear map.
    """

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.lin = nn.Linear(in_dim, out_dim)

    def forward(self, x: torch.Tensor, edge_index: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        loops = torch.arange(n, dtype=torch.long)
        src = torch.cat([edge_index[0], loops])
        dst = torch.cat([edge_index[1], loops])
        deg_out = torch.bincount(src, minlength=n).clamp(min=1).to(x.dtype)
        deg_in = torch.bincount(dst, minlength=n).clamp(min=1).to(x.dtype)
        norm = deg_out[src].rsqrt() * deg_in[dst].rsqrt()
        h = self.lin(x)
        out = torch.zeros_like(h)
        out.index_add_(0, dst, h[src] * norm.unsqueeze(1))
        return out


class GraphBranch(nn.Module):
    """CFG tensors -> d_gnn_out vector.

    Three graph convolutions (rectified, rectified, linear), mean pooling over
    each graph's nodes, then dense layers of 3 and d_gnn_out units, both
    rectified.
    """

    def __init__(self, config: ModelVariantConfig):
        super().__init__()
        hc = config.gnn_hidden_channels
        self.conv1 = GraphConv(EMBED_DIM, hc)
        self.conv2 = GraphConv(hc, hc)
        self.conv3 = GraphConv(hc, hc)
        self.fc1 = nn.Linear(hc, 3)
        self.fc2 = nn.Linear(3, config.d_gnn_out)

    def forward(self, graphs: list[GraphTensors]) -> torch.Tensor:
        x, edge_index, batch_vec, counts = _stack_graphs(graphs)
        h = F.relu(self.conv1(x, edge_index))
        h = F.relu(self.conv2(h, edge_index))
        h = self.conv3(h, edge_index)
        pooled = torch.zeros((len(graphs), h.shape[1]), dtype=h.dtype)
        pooled.index_add_(0, batch_vec, h)
        pooled = pooled / counts.unsqueeze(1)
        return F.relu(self.fc2(F.relu(self.fc1(pooled))))


def _stack_graphs(graphs: list[GraphTensors]):
    """Block-diagonal batching: concatenated nodes, offset edges, and a
    node-to-graph assignment vector."""
    feats, edges, assign, counts = [], [], [], []
    offset = 0
    for i, g in enumerate(graphs):
        if g.node_features.ndim != 2 or g.node_features.shape[1] != EMBED_DIM:
            raise FeatureWidthMismatch(
                f"graph {i}: node features must be N x {EMBED_DIM}, "
                f"got {g.node_features.shape}"
            )
        n = g.node_features.shape[0]
        if n == 0:
            raise FeatureWidthMismatch(f"graph {i} has no nodes")
        feats.append(torch.from_numpy(np.ascontiguousarray(g.node_features, dtype=np.float32)))
        edges.append(torch.from_numpy(np.ascontiguousarray(g.edge_index, dtype=np.int64)) + offset)
        assign.append(torch.full((n,), i, dtype=torch.long))
        counts.append(n)
        offset += n
    x = torch.cat(feats)
    edge_index = torch.cat(edges, dim=1) if edges else torch.zeros((2, 0), dtype=torch.long)
    return x, edge_index, torch.cat(assign), torch.tensor(counts, dtype=torch.float32)


class FusionHead(nn.Module):
    """Concatenated branch outputs -> class probabilities.

    Reshape to (length, 1), 1-D convolution with 64 filters and kernel 3,
    flatten, dense 32 with rectification, dense num_classes with softmax.
    """

    def __init__(self, input_len: int, num_classes: int = 3):
        super().__init__()
        if input_len < 3:
            raise DimMismatch(f"fusion input length {input_len} is below the kernel size 3")
        self.input_len = input_len
        self.conv = nn.Conv1d(1, 64, kernel_size=3)
        self.fc1 = nn.Linear(64 * (input_len - 2), 32)
        self.fc2 = nn.Linear(32, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.input_len:
            raise DimMismatch(f"expected fusion input of length {self.input_len}, got {x.shape[1]}")
        h = F.relu(self.conv(x.unsqueeze(1)))
        h = h.flatten(start_dim=1)
        h = F.relu(self.fc1(h))
        return F.softmax(self.fc2(h), dim=1)


class VariantModel(nn.Module):
    """One ablation variant: the active branches plus the fusion head."""

    def __init__(self, config: ModelVariantConfig, vocab: OpcodeVocab | None = None):
        super().__init__()
        self.config = config
        branches = config.active_branches()
        self.text_branch = TextBranch(config) if "text" in branches else None
        if "opcode" in branches:
            if vocab is None:
                raise ConfigError(f"variant {config.variant!r} needs an opcode vocabulary")
            self.opcode_branch = OpcodeBranch(config, vocab.num_ids)
        else:
            self.opcode_branch = None
        self.graph_branch = GraphBranch(config) if "graph" in branches else None
        self.fusion = FusionHead(config.fusion_input_len(), config.num_classes)

    @property
    def required_features(self) -> tuple[str, ...]:
        return self.config.active_branches()

    def forward(self, batch: FeatureBatch) -> torch.Tensor:
        outputs = []
        for kind in self.config.active_branches():
            if kind == "text":
                if batch.texts is None:
                    raise DimMismatch("batch is missing text features")
                outputs.append(self.text_branch(batch.texts))
            elif kind == "opcode":
                if batch.token_ids is None:
                    raise DimMismatch("batch is missing opcode token ids")
                outputs.append(self.opcode_branch(batch.token_ids))
            else:
                if batch.graphs is None:
                    raise DimMismatch("batch is missing graph tensors")
                outputs.append(self.graph_branch(batch.graphs))
        return self.fusion(torch.cat(outputs, dim=1))


def assemble_variant(
    config: ModelVariantConfig, vocab: OpcodeVocab | None = None
) -> VariantModel:
    return VariantModel(config, vocab=vocab)


def save_checkpoint(
    model: VariantModel,
    directory: str | Path,
    vocab: OpcodeVocab | None = None,
    extra: dict | None = None,
) -> Path:
    """Versioned checkpoint directory: config.json + weights.pt (+ vocab.json)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {"format": 1, "model": model.config.to_json()}
    if extra:
        doc["extra"] = extra
    (directory / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    torch.save(model.state_dict(), directory / "weights.pt")
    if vocab is not None:
        (directory / "vocab.json").write_text(json.dumps(vocab.to_json(), sort_keys=True))
    return directory


def load_checkpoint(directory: str | Path) -> tuple[VariantModel, OpcodeVocab | None]:
    directory = Path(directory)
    config_path = directory / "config.json"
    weights_path = directory / "weights.pt"
    if not config_path.exists() or not weights_path.exists():
        raise CheckpointMismatch(f"no checkpoint at {directory}")
    doc = json.loads(config_path.read_text())
    config = ModelVariantConfig.from_json(doc["model"])
    vocab = None
    vocab_path = directory / "vocab.json"
    if vocab_path.exists():
        vocab = OpcodeVocab.from_json(json.loads(vocab_path.read_text()))
    model = assemble_variant(config, vocab=vocab)
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointMismatch(f"weights do not match config at {directory}: {exc}") from exc
    model.eval()
    return model, vocab
