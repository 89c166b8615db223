"""Thin adapter around an external Solidity compiler executable.

The compiler is invoked as a subprocess in combined-JSON mode; this module
isolates the exact invocation so the rest of the pipeline only sees hex
bytecode. Records whose manifest already carries runtime bytecode never reach
this module (see features.resolve_runtime_bytecode).
"""
from __future__ import annotations

import json
import re
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .corpus import normalize_bytecode


class CompilerNotFound(RuntimeError):
    pass


class CompileError(RuntimeError):
    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


class VersionUnresolvable(CompileError):
    pass


@dataclass
class CompilerConfig:
    executable: str = "solc"
    optimize: bool = False
    version_hint: str | None = None
    timeout_seconds: float = 120.0


@dataclass
class CompiledBytecode:
    creation: str
    runtime: str


_PRAGMA_RE = re.compile(r"pragma\s+solidity\s+([^;]+);")
_VERSION_ERR_RE = re.compile(r"different compiler version|pragma.*not.*satisf", re.IGNORECASE)


def source_pragma(source: str) -> str | None:
    match = _PRAGMA_RE.search(source)
    return match.group(1).strip() if match else None


def compile_source(source: str, config: CompilerConfig | None = None) -> CompiledBytecode:
    """Compile Solidity source and return creation and runtime bytecode.

    Downstream stages use the runtime bytecode only. When the source file
    defines several contracts, the last one with nonempty runtime bytecode
    wins (the main contract conventionally comes last).
    """
    cfg = config or CompilerConfig()
    with tempfile.TemporaryDirectory(prefix="scvd-solc-") as tmp:
        src_path = Path(tmp) / "contract.sol"
        src_path.write_text(source, encoding="utf-8")
        argv = [cfg.executable, "--combined-json", "bin,bin-runtime"]
        if cfg.optimize:
            argv.append("--optimize")
        argv.append(str(src_path))
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=cfg.timeout_seconds
            )
        except FileNotFoundError as exc:
            raise CompilerNotFound(f"compiler executable not found: {cfg.executable!r}") from exc
        except subprocess.TimeoutExpired as exc:
            raise CompileError(f"compiler timed out after {cfg.timeout_seconds}s") from exc

    if proc.returncode != 0:
        stderr = proc.stderr.strip()
        pragma = source_pragma(source)
        if _VERSION_ERR_RE.search(stderr):
            raise VersionUnresolvable(
                f"compiler cannot satisfy pragma {pragma!r}", stderr=stderr
            )
        raise CompileError(f"compilation failed: {stderr}", stderr=stderr)

    try:
        doc = json.loads(proc.stdout)
        contracts = doc["contracts"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise CompileError(f"unexpected compiler output: {exc}", stderr=proc.stderr) from exc

    creation = runtime = None
    for _name, entry in contracts.items():
        bin_runtime = entry.get("bin-runtime", "")
        if bin_runtime:
            creation = entry.get("bin", "")
            runtime = bin_runtime
    if not runtime:
        raise CompileError("compiler produced no runtime bytecode", stderr=proc.stderr)
    return CompiledBytecode(
        creation=normalize_bytecode(creation or ""),
        runtime=normalize_bytecode(runtime),
    )
