"""Training loop, evaluation reports, and the variants-by-epochs ablation grid."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .cfg import GraphTensors
from .corpus import Label
from .metrics import confusion_matrix, metrics_from_confusion
from .models import (
    VARIANT_DISPLAY,
    FeatureBatch,
    ModelVariantConfig,
    OpcodeVocab,
    VariantModel,
    assemble_variant,
)

LABEL_ORDER = tuple(Label)
LABEL_INDEX = {label: i for i, label in enumerate(LABEL_ORDER)}


class MissingFeature(RuntimeError):
    def __init__(self, record_id: str, kind: str):
        super().__init__(f"record {record_id!r} is missing its {kind} feature")
        self.record_id = record_id
        self.kind = kind


class EmptyTestSet(ValueError):
    pass


@dataclass
class FeatureDataset:
    """Materialized features for a set of records, keyed by record id."""

    ids: list[str]
    labels: dict[str, int]
    texts: dict[str, str] = field(default_factory=dict)
    token_ids: dict[str, np.ndarray] = field(default_factory=dict)
    graphs: dict[str, GraphTensors] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, ids: list[str]) -> "FeatureDataset":
        known = set(self.ids)
        unknown = [i for i in ids if i not in known]
        if unknown:
            raise KeyError(f"ids not in dataset: {unknown[:5]}")
        keep = set(ids)
        return FeatureDataset(
            ids=list(ids),
            labels={k: v for k, v in self.labels.items() if k in keep},
            texts={k: v for k, v in self.texts.items() if k in keep},
            token_ids={k: v for k, v in self.token_ids.items() if k in keep},
            graphs={k: v for k, v in self.graphs.items() if k in keep},
        )

    def batch(self, ids: list[str], kinds: tuple[str, ...]) -> tuple[FeatureBatch, torch.Tensor]:
        texts = token_ids = graphs = None
        if "text" in kinds:
            texts = [self._fetch(self.texts, i, "text") for i in ids]
        if "opcode" in kinds:
            rows = [self._fetch(self.token_ids, i, "opcode") for i in ids]
            token_ids = torch.from_numpy(np.stack(rows).astype(np.int64))
        if "graph" in kinds:
            graphs = [self._fetch(self.graphs, i, "graph") for i in ids]
        labels = torch.tensor([self.labels[i] for i in ids], dtype=torch.long)
        return FeatureBatch(texts=texts, token_ids=token_ids, graphs=graphs), labels

    def _fetch(self, table: dict, record_id: str, kind: str):
        if record_id not in table:
            raise MissingFeature(record_id, kind)
        return table[record_id]


@dataclass
class TrainingHyper:
    batch_size: int = 32
    learning_rate: float = 0.001
    optimizer: str = "adam"
    epochs: int = 10
    seed: int = 42

    def __post_init__(self):
        if self.batch_size <= 0 or self.learning_rate <= 0 or self.epochs < 0:
            raise ValueError("batch_size and learning_rate must be positive, epochs >= 0")
        if self.optimizer.lower() != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    def to_json(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "epochs": self.epochs,
            "seed": self.seed,
        }


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class EvaluationReport:
    variant: str
    epochs: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: list[list[int]]
    train_seconds: float
    predict_seconds: float
    split_seed: int
    averaging: str = "weighted"
    config_hash: str = ""

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "epochs": self.epochs,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion,
            "labels": [label.value for label in LABEL_ORDER],
            "train_seconds": self.train_seconds,
            "predict_seconds": self.predict_seconds,
            "split_seed": self.split_seed,
            "averaging": self.averaging,
            "config_hash": self.config_hash,
        }


def _loss(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.nll_loss(torch.log(probs.clamp_min(1e-9)), labels)


def train(model: VariantModel, dataset: FeatureDataset, hyper: TrainingHyper) -> TrainHistory:
    """Cross-entropy training over the three classes with per-epoch seeded
    shuffling. epochs == 0 returns the model untouched with empty history.
    """
    history = TrainHistory()
    if hyper.epochs == 0:
        return history

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=hyper.learning_rate)
    generator = torch.Generator().manual_seed(hyper.seed)
    kinds = model.required_features
    n = len(dataset)

    model.train()
    start = time.perf_counter()
    for _epoch in range(hyper.epochs):
        order = torch.randperm(n, generator=generator).tolist()
        epoch_loss = 0.0
        correct = 0
        for lo in range(0, n, hyper.batch_size):
            ids = [dataset.ids[i] for i in order[lo : lo + hyper.batch_size]]
            batch, labels = dataset.batch(ids, kinds)
            probs = model(batch)
            loss = _loss(probs, labels)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(ids)
            correct += int((probs.argmax(dim=1) == labels).sum())
        history.loss.append(epoch_loss / n)
        history.accuracy.append(correct / n)
    history.seconds = time.perf_counter() - start
    model.eval()
    return history


def predict_probs(model: VariantModel, dataset: FeatureDataset, batch_size: int = 32) -> np.ndarray:
    model.eval()
    rows = []
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            ids = dataset.ids[lo : lo + batch_size]
            batch, _ = dataset.batch(ids, model.required_features)
            rows.append(model(batch).numpy())
    return np.concatenate(rows) if rows else np.zeros((0, model.config.num_classes))


def evaluate(
    model: VariantModel,
    dataset: FeatureDataset,
    *,
    epochs: int = 0,
    train_seconds: float = 0.0,
    split_seed: int = 0,
    averaging: str = "weighted",
    config_hash: str = "",
    batch_size: int = 32,
) -> EvaluationReport:
    """Accumulate the confusion matrix over argmax predictions and derive
    metrics; wall clock is measured over the whole test pass.
    """
    if len(dataset) == 0:
        raise EmptyTestSet("cannot evaluate on an empty test set")
    start = time.perf_counter()
    probs = predict_probs(model, dataset, batch_size=batch_size)
    predict_seconds = time.perf_counter() - start
    y_true = [dataset.labels[i] for i in dataset.ids]
    y_pred = probs.argmax(axis=1).tolist()
    matrix = confusion_matrix(y_true, y_pred, num_classes=model.config.num_classes)
    scores = metrics_from_confusion(matrix, average=averaging)
    return EvaluationReport(
        variant=model.config.variant,
        epochs=epochs,
        accuracy=scores["accuracy"],
        precision=scores["precision"],
        recall=scores["recall"],
        f1=scores["f1"],
        confusion=matrix.tolist(),
        train_seconds=train_seconds,
        predict_seconds=predict_seconds,
        split_seed=split_seed,
        averaging=averaging,
        config_hash=config_hash,
    )


@dataclass
class CellFailure:
    variant: str
    epochs: int
    error: str


@dataclass
class AblationResult:
    reports: list[EvaluationReport]
    failures: list[CellFailure]
    table: str


def run_ablation(
    dataset: FeatureDataset,
    train_ids: list[str],
    test_ids: list[str],
    *,
    variants: list[str],
    epoch_budgets: list[int],
    base_config: ModelVariantConfig,
    hyper: TrainingHyper,
    vocab: OpcodeVocab | None,
    split_seed: int,
    averaging: str = "weighted",
    config_hash: str = "",
    out_dir: str | Path | None = None,
) -> AblationResult:
    """Train and evaluate every variant at every epoch budget on one shared
    split. A failing cell is recorded and skipped, not fatal.
    """
    train_ds = dataset.subset(train_ids)
    test_ds = dataset.subset(test_ids)
    reports: list[EvaluationReport] = []
    failures: list[CellFailure] = []

    for variant in variants:
        for epochs in sorted(epoch_budgets):
            try:
                torch.manual_seed(hyper.seed)
                config = replace(base_config, variant=variant)
                model = assemble_variant(config, vocab=vocab)
                cell_hyper = replace(hyper, epochs=epochs)
                history = train(model, train_ds, cell_hyper)
                report = evaluate(
                    model,
                    test_ds,
                    epochs=epochs,
                    train_seconds=history.seconds,
                    split_seed=split_seed,
                    averaging=averaging,
                    config_hash=config_hash,
                )
                reports.append(report)
            except Exception as exc:  # noqa: BLE001 - grid must survive bad cells
                failures.append(CellFailure(variant=variant, epochs=epochs, error=str(exc)))

    table = render_comparison_table(reports, variants, sorted(epoch_budgets))
    if out_dir is not None:
        write_ablation_artifacts(
            Path(out_dir), reports, failures, table, variants, sorted(epoch_budgets), hyper.seed
        )
    return AblationResult(reports=reports, failures=failures, table=table)


def render_comparison_table(
    reports: list[EvaluationReport], variants: list[str], budgets: list[int]
) -> str:
    """Plain-text grid: metrics as row groups, epoch budgets as rows, variants
    as columns."""
    by_cell = {(r.variant, r.epochs): r for r in reports}
    headers = ["Score", "Epoch"] + [VARIANT_DISPLAY.get(v, v) for v in variants]
    widths = [max(10, len(h) + 2) for h in headers]
    lines = ["".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("-" * sum(widths))
    for metric in ("accuracy", "precision", "recall", "f1"):
        for i, epochs in enumerate(budgets):
            cells = [metric.capitalize() if i == 0 else "", f"E{epochs}"]
            for variant in variants:
                report = by_cell.get((variant, epochs))
                cells.append(f"{getattr(report, metric):.4f}" if report else "-")
            lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
        lines.append("-" * sum(widths))
    return "\n".join(lines) + "\n"


def write_ablation_artifacts(
    out_dir: Path,
    reports: list[EvaluationReport],
    failures: list[CellFailure],
    table: str,
    variants: list[str],
    budgets: list[int],
    seed: int,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for report in reports:
        name = f"report-{report.variant}-e{report.epochs}-s{seed}.json"
        (out_dir / name).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True))
    if failures:
        doc = [{"variant": f.variant, "epochs": f.epochs, "error": f.error} for f in failures]
        (out_dir / f"failures-s{seed}.json").write_text(json.dumps(doc, indent=2))
    (out_dir / f"comparison-s{seed}.txt").write_text(table)

    with open(out_dir / f"metrics-s{seed}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["variant", "epochs", "accuracy", "precision", "recall", "f1",
             "train_seconds", "predict_seconds"]
        )
        for r in reports:
            writer.writerow(
                [r.variant, r.epochs, f"{r.accuracy:.6f}", f"{r.precision:.6f}",
                 f"{r.recall:.6f}", f"{r.f1:.6f}", f"{r.train_seconds:.3f}",
                 f"{r.predict_seconds:.3f}"]
            )
    _write_timing_charts(out_dir, reports, variants, budgets, seed)


def _write_timing_charts(
    out_dir: Path,
    reports: list[EvaluationReport],
    variants: list[str],
    budgets: list[int],
    seed: int,
) -> None:
    """Bar charts of training and prediction wall clock at the largest budget."""
    if not reports or not budgets:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    top = max(budgets)
    by_cell = {(r.variant, r.epochs): r for r in reports}
    names = [VARIANT_DISPLAY.get(v, v) for v in variants]
    for attr, title, fname in (
        ("train_seconds", f"Training time for {top} epochs (s)", f"timing-train-s{seed}.png"),
        ("predict_seconds", "Prediction time on the test set (s)", f"timing-predict-s{seed}.png"),
    ):
        values = [
            getattr(by_cell[(v, top)], attr) if (v, top) in by_cell else 0.0 for v in variants
        ]
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.bar(names, values)
        ax.set_ylabel("seconds")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(out_dir / fname)
        plt.close(fig)
