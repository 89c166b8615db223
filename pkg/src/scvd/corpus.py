"""Labeled contract dataset: JSONL manifest loading and stratified splitting."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class Label(Enum):
    ARITHMETIC = "arithmetic"
    REENTRANCY = "reentrancy"
    CLEAN = "clean"


class Provenance(Enum):
    CURATED = "curated"
    SOLIDIFI = "solidifi"
    WILD = "wild"
    LOCAL = "local"


class ManifestError(ValueError):
    pass


class MalformedManifest(ManifestError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"manifest line {line_no}: {reason}")
        self.line_no = line_no


class UnknownLabel(ManifestError):
    def __init__(self, line_no: int, label: str):
        super().__init__(f"manifest line {line_no}: unknown label {label!r}")
        self.line_no = line_no
        self.label = label


class DuplicateId(ManifestError):
    def __init__(self, line_no: int, record_id: str):
        super().__init__(f"manifest line {line_no}: duplicate id {record_id!r}")
        self.line_no = line_no
        self.record_id = record_id


class ClassTooSmall(ValueError):
    pass


_HEX_DIGITS = set("0123456789abcdef")


def normalize_bytecode(raw: str) -> str:
    """Strip an optional 0x prefix and lowercase; reject non-hex or odd length."""
    code = raw.strip().lower()
    if code.startswith("0x"):
        code = code[2:]
    if len(code) % 2 != 0:
        raise ValueError("bytecode hex has odd length")
    if not set(code) <= _HEX_DIGITS:
        raise ValueError("bytecode contains non-hex characters")
    return code


@dataclass
class ContractRecord:
    """One labeled contract. ``source_text`` is read lazily from ``source_path``."""

    id: str
    source_path: Path
    label: Label
    provenance: Provenance
    bytecode: str | None = None
    _source_text: str | None = field(default=None, repr=False)

    @property
    def source_text(self) -> str:
        if self._source_text is None:
            self._source_text = self.source_path.read_text(encoding="utf-8")
        return self._source_text


@dataclass
class DatasetSplit:
    train: list[str]
    test: list[str]
    seed: int
    test_fraction: float

    def to_json(self) -> dict:
        return {
            "train": list(self.train),
            "test": list(self.test),
            "seed": self.seed,
            "test_fraction": self.test_fraction,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetSplit":
        return cls(
            train=list(doc["train"]),
            test=list(doc["test"]),
            seed=int(doc["seed"]),
            test_fraction=float(doc["test_fraction"]),
        )


def load_manifest(path: str | Path) -> list[ContractRecord]:
    """Load a JSONL manifest; one record per line.

    Each line carries ``id``, ``source_path`` (relative to the manifest's
    directory), ``label``, ``provenance``, and optionally ``bytecode``.
    """
    manifest_path = Path(path)
    base_dir = manifest_path.parent
    records: list[ContractRecord] = []
    seen_ids: set[str] = set()

    with open(manifest_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedManifest(line_no, f"bad JSON ({exc.msg})") from exc
            if not isinstance(doc, dict):
                raise MalformedManifest(line_no, "line is not a JSON object")

            for key in ("id", "source_path", "label", "provenance"):
                if key not in doc:
                    raise MalformedManifest(line_no, f"missing field {key!r}")

            record_id = str(doc["id"])
            if record_id in seen_ids:
                raise DuplicateId(line_no, record_id)
            seen_ids.add(record_id)

            try:
                label = Label(str(doc["label"]).lower())
            except ValueError:
                raise UnknownLabel(line_no, str(doc["label"])) from None
            try:
                provenance = Provenance(str(doc["provenance"]).lower())
            except ValueError as exc:
                raise MalformedManifest(line_no, f"unknown provenance {doc['provenance']!r}") from exc

            bytecode = None
            if doc.get("bytecode") is not None:
                try:
                    bytecode = normalize_bytecode(str(doc["bytecode"]))
                except ValueError as exc:
                    raise MalformedManifest(line_no, str(exc)) from exc

            records.append(
                ContractRecord(
                    id=record_id,
                    source_path=base_dir / str(doc["source_path"]),
                    label=label,
                    provenance=provenance,
                    bytecode=bytecode,
                )
            )
    return records


def label_histogram(records: list[ContractRecord]) -> dict[str, int]:
    counts = {label.value: 0 for label in Label}
    for record in records:
        counts[record.label.value] += 1
    return counts


def stratified_split(
    records: list[ContractRecord], test_fraction: float, seed: int
) -> DatasetSplit:
    """Deterministic stratified train/test partition of record ids.

    Per class, round(n * test_fraction) records go to test (capped so train
    keeps at least one record of every class).
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")

    by_label: dict[Label, list[str]] = {label: [] for label in Label}
    for record in records:
        by_label[record.label].append(record.id)

    for label, ids in by_label.items():
        if 0 < len(ids) < 2:
            raise ClassTooSmall(f"class {label.value!r} has only {len(ids)} record(s)")

    rng = random.Random(seed)
    train: list[str] = []
    test: list[str] = []
    for label in Label:
        ids = sorted(by_label[label])
        if not ids:
            continue
        rng.shuffle(ids)
        take = int(len(ids) * test_fraction + 0.5)
        take = min(take, len(ids) - 1)
        test.extend(ids[:take])
        train.extend(ids[take:])
    return DatasetSplit(train=train, test=test, seed=seed, test_fraction=test_fraction)
