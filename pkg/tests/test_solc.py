from __future__ import annotations

import pytest

from scvd.solc import (
    CompileError,
    CompilerConfig,
    CompilerNotFound,
    VersionUnresolvable,
    compile_source,
    source_pragma,
)

from conftest import write_stub_solc


@pytest.fixture()
def stub_config(tmp_path):
    return CompilerConfig(executable=str(write_stub_solc(tmp_path)))


def test_minimal_contract_compiles(stub_config):
    result = compile_source("contract C {}", stub_config)
    assert result.runtime == "60016002015b00"
    assert result.creation != ""


def test_syntax_error_carries_compiler_diagnostic(stub_config):
    with pytest.raises(CompileError) as exc:
        compile_source("contract C { SYNTAX_ERROR }", stub_config)
    assert "ParserError" in exc.value.stderr


def test_version_conflict_detected(stub_config):
    with pytest.raises(VersionUnresolvable):
        compile_source("pragma solidity ^0.4.0; NEED_OTHER_VERSION", stub_config)


def test_missing_compiler_reported():
    config = CompilerConfig(executable="/nonexistent/solc-binary")
    with pytest.raises(CompilerNotFound):
        compile_source("contract C {}", config)


def test_source_pragma_extraction():
    assert source_pragma("pragma solidity ^0.8.17;\ncontract C {}") == "^0.8.17"
    assert source_pragma("contract C {}") is None
