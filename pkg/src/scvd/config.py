"""Pipeline configuration: one serializable object covering ingest through
ablation, hashed so every report can name the exact configuration that
produced it. Credentials never live here; they come from the environment.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .models import ModelVariantConfig
from .solc import CompilerConfig
from .training import TrainingHyper


@dataclass
class PipelineConfig:
    manifest: str = "manifest.jsonl"
    workspace: str = "workspace"
    solc_path: str = "solc"
    solc_optimize: bool = False
    provider: str = "local"
    embed_seed: int = 42
    collapse_spaces: bool = True
    split_fraction: float = 0.2
    split_seed: int = 42
    averaging: str = "weighted"
    workers: int = 1
    failure_threshold: float = 0.1
    model: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text())
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    def config_hash(self) -> str:
        canonical = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def compiler_config(self) -> CompilerConfig:
        return CompilerConfig(executable=self.solc_path, optimize=self.solc_optimize)

    def model_config(self, variant: str | None = None, preset: str | None = None) -> ModelVariantConfig:
        overrides = dict(self.model)
        if variant is not None:
            overrides["variant"] = variant
        if preset is not None:
            overrides["encoder_preset"] = preset
        return ModelVariantConfig(**overrides)

    def hyper_config(self, epochs: int | None = None, seed: int | None = None) -> TrainingHyper:
        overrides = dict(self.hyper)
        if epochs is not None:
            overrides["epochs"] = epochs
        if seed is not None:
            overrides["seed"] = seed
        overrides.setdefault("seed", self.split_seed)
        return TrainingHyper(**overrides)

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})
